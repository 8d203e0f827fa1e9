use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Hit, RetrievalError, RetrievedSet, Retriever};
use crate::qa::Document;

const INDEX_FILE: &str = "index.json";

/// Okapi BM25 parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(RetrievalError::InvalidParams(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::InvalidParams(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: usize,
    pub tf: u32,
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Immutable inverted index over a corpus. Only the document `text` field is
/// indexed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieverIndex {
    documents: Vec<Document>,
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    params: Bm25Params,
}

impl RetrieverIndex {
    pub fn build(corpus: Vec<Document>, params: Bm25Params) -> Result<Self, RetrievalError> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut ids = HashSet::with_capacity(corpus.len());
        for doc in &corpus {
            if !ids.insert(doc.doc_id.as_str()) {
                return Err(RetrievalError::DuplicateDocId(doc.doc_id.clone()));
            }
        }

        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (ordinal, doc) in corpus.iter().enumerate() {
            let tokens = tokenize(&doc.text);
            doc_lengths.push(tokens.len() as u32);
            let mut counts: HashMap<String, u32> = HashMap::new();
            for tok in tokens {
                *counts.entry(tok).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: ordinal, tf });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;

        Ok(Self {
            documents: corpus,
            postings,
            doc_lengths,
            avg_doc_length,
            params,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.documents.len() as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 scores of every document matching at least one query token.
    /// Repeated query tokens contribute once per occurrence.
    pub fn score_all(&self, query: &str) -> HashMap<usize, f64> {
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in tokenize(query) {
            let postings = self.postings(&term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(postings.len());
            for p in postings {
                let tf = f64::from(p.tf);
                let len_norm = 1.0 - b + b * f64::from(self.doc_lengths[p.doc]) / self.avg_doc_length;
                *scores.entry(p.doc).or_default() += idf * tf * (k1 + 1.0) / (tf + k1 * len_norm);
            }
        }
        scores
    }

    /// Top-k documents by score; ties go to the smaller doc_id.
    pub fn search(&self, query: &str, k: usize) -> RetrievedSet {
        let mut ranked: Vec<(usize, f64)> = self.score_all(query).into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.documents[a.0].doc_id.cmp(&self.documents[b.0].doc_id))
        });
        ranked.truncate(k);
        RetrievedSet {
            query: query.to_owned(),
            hits: ranked
                .into_iter()
                .map(|(doc, score)| Hit {
                    document: self.documents[doc].clone(),
                    score,
                })
                .collect(),
            k,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        fs::create_dir_all(dir)?;
        let bytes = serde_json::to_vec(self)?;
        fs::write(dir.join(INDEX_FILE), bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let bytes = fs::read(dir.join(INDEX_FILE))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

impl Retriever for RetrieverIndex {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        Ok(self.search(query, k))
    }
}
