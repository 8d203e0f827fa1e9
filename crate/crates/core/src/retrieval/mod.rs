//! Document retrieval: an in-memory BM25 index, context deduplication and a
//! client for remote retrievers.

mod bm25;
mod remote;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::qa::Document;

pub use bm25::{tokenize, Bm25Params, Posting, RetrieverIndex};
pub use remote::RemoteRetriever;

/// Default number of documents per search.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("duplicate doc_id {0:?} in corpus")]
    DuplicateDocId(String),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("remote retriever transport failure: {0}")]
    Transport(String),
    #[error("remote retriever returned a malformed body: {0}")]
    Malformed(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file is corrupt: {0}")]
    Corrupt(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub document: Document,
    pub score: f64,
}

/// The ranked result of one search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub query: String,
    pub hits: Vec<Hit>,
    pub k: usize,
}

impl RetrievedSet {
    pub fn empty(query: impl Into<String>, k: usize) -> Self {
        Self {
            query: query.into(),
            hits: Vec::new(),
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.document.doc_id.as_str())
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.hits.iter().map(|h| &h.document)
    }
}

/// Anything that can answer a top-k search.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievedSet, RetrievalError>;
}

impl<R: Retriever + ?Sized> Retriever for &R {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        (**self).retrieve(query, k)
    }
}

impl<R: Retriever + ?Sized> Retriever for Box<R> {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        (**self).retrieve(query, k)
    }
}

/// Drops hits whose doc_id is already in the context. Order, query and k are kept.
pub fn dedup_against_context(hits: RetrievedSet, seen_ids: &HashSet<String>) -> RetrievedSet {
    RetrievedSet {
        hits: hits
            .hits
            .into_iter()
            .filter(|h| !seen_ids.contains(&h.document.doc_id))
            .collect(),
        ..hits
    }
}
