use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Hit, RetrievalError, RetrievedSet, Retriever};
use crate::qa::Document;

#[derive(Serialize)]
struct SearchRequest<'a> {
    query: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct SearchResponse {
    docs: Vec<RemoteDoc>,
}

#[derive(Deserialize)]
struct RemoteDoc {
    doc_id: String,
    title: String,
    text: String,
    score: f64,
}

/// Client for an external index speaking `POST /search`.
///
/// Request `{"query": str, "k": int}`, response
/// `{"docs": [{"doc_id", "title", "text", "score"}]}`. Non-2xx statuses and
/// malformed bodies are reported as errors; returned docs are re-sorted and
/// deduplicated so the `RetrievedSet` ordering invariant holds regardless of
/// the server.
#[derive(Debug, Clone)]
pub struct RemoteRetriever {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteRetriever {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let url = format!("{}/search", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(SearchRequest { query, k })
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(RetrievalError::Transport(format!("{url} returned HTTP {}", status.as_u16())));
        }
        let body: SearchResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| RetrievalError::Malformed(e.to_string()))?;

        let mut hits: Vec<Hit> = Vec::with_capacity(body.docs.len());
        for d in body.docs {
            if !d.score.is_finite() {
                return Err(RetrievalError::Malformed(format!("non-finite score for {}", d.doc_id)));
            }
            if hits.iter().any(|h| h.document.doc_id == d.doc_id) {
                continue;
            }
            hits.push(Hit {
                document: Document {
                    doc_id: d.doc_id,
                    title: d.title,
                    text: d.text,
                },
                score: d.score,
            });
        }
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.document.doc_id.cmp(&b.document.doc_id))
        });
        hits.truncate(k);
        Ok(RetrievedSet {
            query: query.to_owned(),
            hits,
            k,
        })
    }
}
