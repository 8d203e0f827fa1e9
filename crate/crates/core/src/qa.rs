//! Question-answering domain types, text normalization, and JSONL ingestion.
//!
//! Datasets and corpora are line-delimited JSON. A malformed line aborts the
//! load and the error carries its 1-based line number.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("duplicate id {id:?} on line {line}")]
    DuplicateId { line: usize, id: String },
}

/// One gold evidence sentence and the title of the document it comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub title: String,
    pub sentence: String,
}

/// A benchmark question with its gold answers, gold document titles and
/// gold evidence sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub gold_titles: Vec<String>,
    #[serde(rename = "evidence", default)]
    pub gold_evidence: Vec<Evidence>,
    #[serde(rename = "hops", default, skip_serializing_if = "Option::is_none")]
    pub hop_count: Option<u32>,
}

impl QaExample {
    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("field \"id\" must be non-empty".into());
        }
        if self.gold_answers.is_empty() {
            return Err("field \"answers\" must contain at least one answer".into());
        }
        if self.hop_count == Some(0) {
            return Err("field \"hops\" must be a positive integer".into());
        }
        Ok(())
    }
}

/// A retrievable passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<QaExample>,
    pub split_name: String,
}

impl Dataset {
    pub fn new(split_name: impl Into<String>, examples: Vec<QaExample>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for (i, ex) in examples.iter().enumerate() {
            if !seen.insert(ex.id.as_str()) {
                return Err(DataError::DuplicateId {
                    line: i + 1,
                    id: ex.id.clone(),
                });
            }
        }
        Ok(Self {
            examples,
            split_name: split_name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QaExample> {
        self.examples.iter().find(|ex| ex.id == id)
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line)))
}

/// Loads a dataset JSONL file, keeping the first `limit` examples in file order.
///
/// Blank lines are skipped but still count toward line numbers.
pub fn load_dataset(path: &Path, limit: Option<usize>) -> Result<Dataset, DataError> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in open_lines(path)? {
        if limit.is_some_and(|l| examples.len() >= l) {
            break;
        }
        let line = line.map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let example: QaExample = serde_json::from_str(&line).map_err(|e| DataError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        example.validate().map_err(|message| DataError::Schema {
            line: line_no,
            message,
        })?;
        if !seen.insert(example.id.clone()) {
            return Err(DataError::DuplicateId {
                line: line_no,
                id: example.id,
            });
        }
        examples.push(example);
    }
    let split_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        examples,
        split_name,
    })
}

/// Loads a corpus JSONL file of `{"doc_id", "title", "text"}` objects.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, DataError> {
    let mut docs = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| DataError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        if doc.title.trim().is_empty() {
            return Err(DataError::Schema {
                line: line_no,
                message: "field \"title\" must be non-empty".into(),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// SQuAD-style answer normalization: lowercase, strip punctuation, drop the
/// articles "a", "an" and "the", collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    stripped
        .split_whitespace()
        .filter(|tok| !ARTICLES.contains(tok))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Title normalization: lowercase, collapse whitespace, trim. Punctuation and
/// articles are kept since titles are identifiers.
pub fn normalize_title(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace tokens of the normalized answer, the unit of word-level F1.
pub fn answer_tokens(s: &str) -> Vec<String> {
    normalize_answer(s)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}
