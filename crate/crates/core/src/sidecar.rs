//! Blocking HTTP client for the model sidecar: embeddings, abstractive
//! summaries and relevance scores.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum SidecarError {
    /// Transport failures, timeouts and server-side errors. Worth retrying.
    #[error("sidecar unavailable: {0}")]
    Retriable(String),
    /// The service answered, but not with what the contract promises.
    #[error("sidecar protocol error: {0}")]
    Protocol(String),
}

impl SidecarError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Retriable(_))
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub model: String,
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize)]
struct SummarizeRequest<'a> {
    texts: &'a [String],
    max_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct SummarizeResponse {
    summary: String,
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<[&'a str; 2]>,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Clone)]
pub struct SidecarClient {
    base: String,
    http: Client,
    attempts: usize,
    backoff: Duration,
}

impl SidecarClient {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, SidecarError> {
        let http = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| SidecarError::Retriable(e.to_string()))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_owned(),
            http,
            attempts: 3,
            backoff: Duration::from_millis(250),
        })
    }

    /// Total tries per request for retriable failures, with linear backoff.
    pub fn with_retries(mut self, attempts: usize, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, SidecarError> {
        let mut last = None;
        for attempt in 0..self.attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * attempt as u32);
            }
            match self.post_once(path, body) {
                Err(e @ SidecarError::Retriable(_)) => {
                    tracing::warn!(path, attempt, error = %e, "sidecar request failed");
                    last = Some(e);
                }
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn post_once<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, SidecarError> {
        let url = format!("{}{}", self.base, path);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| SidecarError::Retriable(format!("{url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let detail = resp
                .json::<ErrorBody>()
                .map(|b| b.error)
                .unwrap_or_else(|_| status.to_string());
            let msg = format!("{url} returned {status}: {detail}");
            let transient = status.is_server_error()
                || status == StatusCode::TOO_MANY_REQUESTS
                || status == StatusCode::REQUEST_TIMEOUT;
            return Err(if transient {
                SidecarError::Retriable(msg)
            } else {
                SidecarError::Protocol(msg)
            });
        }
        resp.json::<T>()
            .map_err(|e| SidecarError::Protocol(format!("{url}: malformed response: {e}")))
    }

    pub fn embed(&self, texts: &[String]) -> Result<EmbedResponse, SidecarError> {
        self.post("/embed", &EmbedRequest { texts })
    }

    pub fn summarize(&self, texts: &[String], max_tokens: usize) -> Result<String, SidecarError> {
        let resp: SummarizeResponse = self.post("/summarize", &SummarizeRequest { texts, max_tokens })?;
        if resp.summary.trim().is_empty() {
            return Err(SidecarError::Protocol("empty summary".into()));
        }
        Ok(resp.summary)
    }

    /// One relevance score in `[0, 1]` per `(a, b)` pair.
    pub fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, SidecarError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let req = ScoreRequest {
            pairs: pairs.iter().map(|(a, b)| [a.as_str(), b.as_str()]).collect(),
        };
        let resp: ScoreResponse = self.post("/score", &req)?;
        if resp.scores.len() != pairs.len() {
            return Err(SidecarError::Protocol(format!(
                "{} scores for {} pairs",
                resp.scores.len(),
                pairs.len()
            )));
        }
        if let Some(bad) = resp.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(SidecarError::Protocol(format!("score {bad} outside [0, 1]")));
        }
        Ok(resp.scores)
    }
}

/// Embeds `texts` and labels row `i` with `post_ids[i]`. An empty input
/// yields an empty matrix without contacting the service.
pub fn fetch_embeddings(
    client: &SidecarClient,
    post_ids: &[String],
    texts: &[String],
) -> Result<EmbeddingMatrix, SidecarError> {
    assert_eq!(post_ids.len(), texts.len(), "one post id per text");
    if texts.is_empty() {
        return Ok(EmbeddingMatrix::empty("unknown"));
    }
    let resp = client.embed(texts)?;
    if resp.vectors.len() != texts.len() {
        return Err(SidecarError::Protocol(format!(
            "{} vectors for {} texts",
            resp.vectors.len(),
            texts.len()
        )));
    }
    if let Some(i) = resp.vectors.iter().position(|v| v.len() != resp.dim) {
        return Err(SidecarError::Protocol(format!(
            "vector {i} has {} entries, service reported dim {}",
            resp.vectors[i].len(),
            resp.dim
        )));
    }
    EmbeddingMatrix::from_rows(post_ids.to_vec(), resp.vectors, resp.model)
        .map_err(|e| SidecarError::Protocol(e.to_string()))
}
