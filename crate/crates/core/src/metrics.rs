//! Answer, retrieval and efficiency metrics.
//!
//! Per-example metrics are fractions in `[0, 1]`. Run-level aggregates are
//! reported ×100, except the mean search count and the tradeoff scores, which
//! are computed from the fractional means.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::qa::{answer_tokens, normalize_answer, normalize_title, Dataset, Document, Evidence};
use crate::rollout::Rollout;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("rollout for example {0:?} has no matching dataset entry")]
    UnknownExample(String),
    #[error("tradeoff metrics need a positive mean search count, got {0}")]
    ZeroSearches(f64),
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *gold_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut tp = 0usize;
    for t in pred {
        if let Some(c) = gold_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                tp += 1;
            }
        }
    }
    let fp = pred.len() - tp;
    let fn_ = gold.len() - tp;
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Word-level F1 over normalized token multisets, maximized over golds.
pub fn answer_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    let pred = answer_tokens(prediction);
    golds
        .iter()
        .map(|g| token_f1(&pred, &answer_tokens(g.as_ref())))
        .fold(0.0, f64::max)
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    let pred = normalize_answer(prediction);
    let hit = golds.iter().any(|g| normalize_answer(g.as_ref()) == pred);
    if hit { 1.0 } else { 0.0 }
}

/// 1 if any normalized gold occurs inside the normalized prediction.
pub fn match_score<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    let pred = normalize_answer(prediction);
    let hit = golds.iter().any(|g| pred.contains(&normalize_answer(g.as_ref())));
    if hit { 1.0 } else { 0.0 }
}

/// Fraction of gold titles present in the context (case-insensitive, trimmed).
pub fn doc_recall<A: AsRef<str>, B: AsRef<str>>(context_titles: &[A], gold_titles: &[B]) -> f64 {
    let gold: HashSet<String> = gold_titles.iter().map(|t| normalize_title(t.as_ref())).collect();
    if gold.is_empty() {
        return 0.0;
    }
    let ctx: HashSet<String> = context_titles.iter().map(|t| normalize_title(t.as_ref())).collect();
    gold.intersection(&ctx).count() as f64 / gold.len() as f64
}

/// Mean over evidence sentences of the best word-level F1 against any
/// retrieved document's text. Empty evidence scores 0.
pub fn support_f1<'a>(context_docs: impl IntoIterator<Item = &'a Document>, gold_evidence: &[Evidence]) -> f64 {
    if gold_evidence.is_empty() {
        return 0.0;
    }
    let doc_tokens: Vec<Vec<String>> = context_docs.into_iter().map(|d| answer_tokens(&d.text)).collect();
    let total: f64 = gold_evidence
        .iter()
        .map(|ev| {
            let sent = answer_tokens(&ev.sentence);
            doc_tokens.iter().map(|d| token_f1(d, &sent)).fold(0.0, f64::max)
        })
        .sum();
    total / gold_evidence.len() as f64
}

/// Tradeoff scores from fractional metrics and the mean search count.
pub fn tradeoff_from_fractions(
    f1: f64,
    em: f64,
    match_: f64,
    recall: f64,
    support_f1: f64,
    searches: f64,
) -> Result<(f64, f64), MetricsError> {
    if searches.is_nan() || searches <= 0.0 {
        return Err(MetricsError::ZeroSearches(searches));
    }
    let answer = 100.0 * (f1 + em + match_) / (3.0 * searches);
    let retrieval = 100.0 * (recall + support_f1) / (2.0 * searches);
    Ok((answer, retrieval))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerScores {
    pub f1: f64,
    pub em: f64,
    #[serde(rename = "match")]
    pub match_: f64,
}

impl AnswerScores {
    pub fn compute<S: AsRef<str>>(prediction: &str, golds: &[S]) -> Self {
        Self {
            f1: answer_f1(prediction, golds),
            em: exact_match(prediction, golds),
            match_: match_score(prediction, golds),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub recall: f64,
    pub support_f1: f64,
    pub searches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub example_id: String,
    pub answer: AnswerScores,
    pub retrieval: RetrievalScores,
}

/// Run-level means; metric fields are ×100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub f1: f64,
    pub em: f64,
    #[serde(rename = "match")]
    pub match_: f64,
    pub recall: f64,
    pub support_f1: f64,
    pub searches: f64,
    pub tradeoff_answer: Option<f64>,
    pub tradeoff_retrieval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub per_example: Vec<ExampleScores>,
    pub aggregates: Aggregates,
}

impl RunReport {
    pub fn from_scores(per_example: Vec<ExampleScores>) -> Self {
        let n = per_example.len();
        let mean = |f: &dyn Fn(&ExampleScores) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_example.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let f1 = mean(&|s| s.answer.f1);
        let em = mean(&|s| s.answer.em);
        let match_ = mean(&|s| s.answer.match_);
        let recall = mean(&|s| s.retrieval.recall);
        let sup = mean(&|s| s.retrieval.support_f1);
        let searches = mean(&|s| s.retrieval.searches as f64);
        let tradeoffs = tradeoff_from_fractions(f1, em, match_, recall, sup, searches).ok();
        Self {
            aggregates: Aggregates {
                n,
                f1: 100.0 * f1,
                em: 100.0 * em,
                match_: 100.0 * match_,
                recall: 100.0 * recall,
                support_f1: 100.0 * sup,
                searches,
                tradeoff_answer: tradeoffs.map(|t| t.0),
                tradeoff_retrieval: tradeoffs.map(|t| t.1),
            },
            per_example,
        }
    }

    /// `(tradeoff_answer, tradeoff_retrieval)` from the aggregates.
    pub fn tradeoff_metrics(&self) -> Result<(f64, f64), MetricsError> {
        let a = &self.aggregates;
        tradeoff_from_fractions(
            a.f1 / 100.0,
            a.em / 100.0,
            a.match_ / 100.0,
            a.recall / 100.0,
            a.support_f1 / 100.0,
            a.searches,
        )
    }

    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "example_id,f1,em,match,recall,support_f1,searches")?;
        for s in &self.per_example {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                csv_field(&s.example_id),
                s.answer.f1,
                s.answer.em,
                s.answer.match_,
                s.retrieval.recall,
                s.retrieval.support_f1,
                s.retrieval.searches
            )?;
        }
        w.flush()
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn score_rollout(rollout: &Rollout, example: &crate::qa::QaExample) -> ExampleScores {
    let prediction = rollout.answer.as_deref().unwrap_or_default();
    ExampleScores {
        example_id: rollout.example_id.clone(),
        answer: AnswerScores::compute(prediction, &example.gold_answers),
        retrieval: RetrievalScores {
            recall: doc_recall(&rollout.context_titles(), &example.gold_titles),
            support_f1: support_f1(rollout.context_documents(), &example.gold_evidence),
            searches: rollout.h_term,
        },
    }
}

/// Scores every rollout against its dataset entry. A missing answer scores
/// as the empty string.
pub fn evaluate_run(rollouts: &[Rollout], dataset: &Dataset) -> Result<RunReport, MetricsError> {
    let by_id: HashMap<&str, &crate::qa::QaExample> =
        dataset.examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let scores = rollouts
        .iter()
        .map(|r| {
            let ex = by_id
                .get(r.example_id.as_str())
                .ok_or_else(|| MetricsError::UnknownExample(r.example_id.clone()))?;
            Ok(score_rollout(r, ex))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(RunReport::from_scores(scores))
}
