//! HTTP clients for inference servers.
//!
//! Wire contract (JSON over HTTP POST):
//!
//! * `/v1/completions`: `{model, prompt, max_tokens, temperature, seed?}` ->
//!   `{choices: [{text, finish_reason}]}`. The adapter name, when present,
//!   travels in `model`; multi-adapter servers route on it.
//! * `/v1/embeddings`: `{model, input: [..]}` -> `{data: [{index, embedding}]}`
//! * `/v1/entailment`: `{model, premise, hypothesis}` -> `{label}`
//! * `/v1/token-scores`: `{model, tokens: [..]}` -> `{retain: [..]}`
//!
//! Connection failures, timeouts and 5xx responses are transport errors and
//! are retried. A 404 naming the model is a configuration error.

use std::sync::Arc;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::limit::{InFlightLimiter, RetryPolicy};
use super::{
    check_embedding_batch, Completer, Completion, CompletionRequest, Embedder, EmbeddingVector,
    Entailer, EntailmentLabel, EntailmentVerdict,
};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct RemoteClient {
    base_url: String,
    http: Client,
    retry: RetryPolicy,
    limiter: InFlightLimiter,
}

impl RemoteClient {
    pub fn new(
        base_url: &str,
        timeout: Duration,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Result<Self> {
        let http = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(RemoteClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            http,
            retry,
            limiter: InFlightLimiter::new(max_in_flight),
        })
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{}", self.base_url, path);
        self.retry.run(|| {
            let _permit = self.limiter.acquire();
            let resp = self
                .http
                .post(&url)
                .json(body)
                .send()
                .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
            let status = resp.status();
            if status.is_server_error() {
                return Err(Error::Transport(format!("{url}: HTTP {status}")));
            }
            if status == StatusCode::NOT_FOUND {
                let text = resp.text().unwrap_or_default();
                return Err(Error::Config(format!("{url}: not found: {text}")));
            }
            if !status.is_success() {
                let text = resp.text().unwrap_or_default();
                return Err(Error::Config(format!("{url}: HTTP {status}: {text}")));
            }
            resp.json::<R>()
                .map_err(|e| Error::Transport(format!("{url}: bad response body: {e}")))
        })
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

pub struct RemoteCompleter {
    client: Arc<RemoteClient>,
    backbone: String,
}

impl RemoteCompleter {
    pub fn new(client: Arc<RemoteClient>, backbone: &str) -> Self {
        RemoteCompleter {
            client,
            backbone: backbone.to_string(),
        }
    }
}

impl Completer for RemoteCompleter {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        let body = CompletionBody {
            model: req.adapter.as_deref().unwrap_or(&self.backbone),
            prompt: &req.prompt,
            max_tokens: req.max_tokens,
            temperature: req.temperature,
            seed: req.seed,
        };
        let resp: CompletionResponse = self.client.post("/v1/completions", &body)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::Transport("completion response had no choices".into()))?;
        Ok(Completion {
            truncated: choice.finish_reason.as_deref() == Some("length"),
            text: choice.text,
        })
    }
}

#[derive(Serialize)]
struct EmbeddingBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

pub struct RemoteEmbedder {
    client: Arc<RemoteClient>,
    model: String,
}

impl RemoteEmbedder {
    pub fn new(client: Arc<RemoteClient>, model: &str) -> Self {
        RemoteEmbedder {
            client,
            model: model.to_string(),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let resp: EmbeddingResponse = self.client.post(
            "/v1/embeddings",
            &EmbeddingBody {
                model: &self.model,
                input: texts,
            },
        )?;
        let mut data = resp.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        let out: Vec<EmbeddingVector> = data
            .into_iter()
            .map(|d| EmbeddingVector::normalized(d.embedding))
            .collect();
        check_embedding_batch(texts.len(), &out)?;
        Ok(out)
    }
}

#[derive(Serialize)]
struct EntailmentBody<'a> {
    model: &'a str,
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct EntailmentResponse {
    label: EntailmentLabel,
}

pub struct RemoteEntailer {
    client: Arc<RemoteClient>,
    model: String,
}

impl RemoteEntailer {
    pub fn new(client: Arc<RemoteClient>, model: &str) -> Self {
        RemoteEntailer {
            client,
            model: model.to_string(),
        }
    }
}

impl Entailer for RemoteEntailer {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict> {
        let resp: EntailmentResponse = self.client.post(
            "/v1/entailment",
            &EntailmentBody {
                model: &self.model,
                premise,
                hypothesis,
            },
        )?;
        Ok(resp.label.into())
    }
}

#[derive(Serialize)]
struct TokenScoreBody<'a> {
    model: &'a str,
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct TokenScoreResponse {
    retain: Vec<f64>,
}

/// Retain probabilities from a served token-classification model.
pub struct RemoteTokenScorer {
    client: Arc<RemoteClient>,
    model: String,
}

impl RemoteTokenScorer {
    pub fn new(client: Arc<RemoteClient>, model: &str) -> Self {
        RemoteTokenScorer {
            client,
            model: model.to_string(),
        }
    }

    pub fn retain_scores(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let resp: TokenScoreResponse = self.client.post(
            "/v1/token-scores",
            &TokenScoreBody {
                model: &self.model,
                tokens,
            },
        )?;
        if resp.retain.len() != tokens.len() {
            return Err(Error::Config(format!(
                "token scorer returned {} scores for {} tokens",
                resp.retain.len(),
                tokens.len()
            )));
        }
        Ok(resp.retain)
    }
}
