//! Backend interface for the three model capabilities the pipeline needs:
//! text completion with per-request adapter routing, sentence embedding, and
//! three-way entailment classification.
//!
//! Every capability has a remote HTTP client and a deterministic in-process
//! mock. Pipeline code only ever sees the traits.

mod limit;
mod mock;
mod remote;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use limit::{InFlightLimiter, RetryPolicy};
pub use mock::{prompt_hash, MockCompleter, MockEmbedder, MockEntailer, MOCK_EMBED_DIM};
pub use remote::{RemoteClient, RemoteCompleter, RemoteEmbedder, RemoteEntailer, RemoteTokenScorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    /// Adapter to route to; `None` addresses the backbone model.
    pub adapter: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            adapter: None,
            max_tokens: 64,
            temperature: 0.0,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens < 1 {
            return Err(Error::Validation("max_tokens must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Validation("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// The backend stopped because it hit `max_tokens`.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// L2-normalizes `values`. A zero vector is left as is and marked
    /// unnormalized.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector {
            normalized: norm > 0.0,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Clamped to [-1, 1] against rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntailmentLabel {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailmentVerdict {
    pub label: EntailmentLabel,
    pub positive: bool,
}

impl From<EntailmentLabel> for EntailmentVerdict {
    fn from(label: EntailmentLabel) -> Self {
        EntailmentVerdict {
            label,
            positive: label != EntailmentLabel::Contradiction,
        }
    }
}

pub trait Completer: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = self.embed(&[text.to_string()])?;
        v.pop()
            .ok_or_else(|| Error::Transport("embedding backend returned nothing".into()))
    }
}

pub trait Entailer: Send + Sync {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict>;
}

/// Checks a batch of embeddings: one per input, equal dimensions, normalized.
pub fn check_embedding_batch(inputs: usize, vectors: &[EmbeddingVector]) -> Result<()> {
    if vectors.len() != inputs {
        return Err(Error::Config(format!(
            "embedding backend returned {} vectors for {inputs} inputs",
            vectors.len()
        )));
    }
    if let Some(first) = vectors.first() {
        for v in vectors {
            if v.dim() != first.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    got: v.dim(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterNames {
    pub call_driver: String,
}

impl Default for AdapterNames {
    fn default() -> Self {
        AdapterNames {
            call_driver: "call-driver".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub kind: BackendKind,
    pub base_url: String,
    /// Backbone model served without an adapter (used for topic labels).
    pub model: String,
    pub adapters: AdapterNames,
    pub embedding_model: String,
    pub entailment_model: String,
    /// Token-classifier model used by the remote compression scorer.
    pub token_scorer_model: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Dimension of the mock embedder.
    pub embed_dim: usize,
    /// JSON object mapping prompt SHA-256 hex digests to mock completions.
    pub fixtures: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            kind: BackendKind::Mock,
            base_url: "http://127.0.0.1:8000".into(),
            model: "mistral-7b-instruct-v0.2".into(),
            adapters: AdapterNames::default(),
            embedding_model: "sentence-transformers/all-MiniLM-L6-v2".into(),
            entailment_model: "cross-encoder/nli-deberta-v3-base".into(),
            token_scorer_model: "llmlingua-2".into(),
            timeout_ms: 30_000,
            retries: 3,
            backoff_ms: 200,
            max_in_flight: 8,
            embed_dim: MOCK_EMBED_DIM,
            fixtures: None,
        }
    }
}

/// Shareable bundle of the three backends plus the adapter names callers
/// route to.
#[derive(Clone)]
pub struct Gateway {
    pub completer: Arc<dyn Completer>,
    pub embedder: Arc<dyn Embedder>,
    pub entailer: Arc<dyn Entailer>,
    pub adapters: AdapterNames,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("adapters", &self.adapters)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn mock() -> Self {
        Self::mock_with(MockCompleter::default(), MOCK_EMBED_DIM)
    }

    pub fn mock_with(completer: MockCompleter, embed_dim: usize) -> Self {
        Gateway {
            completer: Arc::new(completer),
            embedder: Arc::new(MockEmbedder::new(embed_dim)),
            entailer: Arc::new(MockEntailer),
            adapters: AdapterNames::default(),
        }
    }

    pub fn from_config(cfg: &GatewayConfig) -> Result<Self> {
        match cfg.kind {
            BackendKind::Mock => {
                let mut completer = MockCompleter::default()
                    .with_adapters([cfg.adapters.call_driver.clone()]);
                if let Some(path) = &cfg.fixtures {
                    let content =
                        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    let fixtures: BTreeMap<String, String> = serde_json::from_str(&content)
                        .map_err(|e| Error::Config(format!("mock fixtures: {e}")))?;
                    completer = completer.with_fixtures(fixtures);
                }
                let mut gw = Self::mock_with(completer, cfg.embed_dim);
                gw.adapters = cfg.adapters.clone();
                Ok(gw)
            }
            BackendKind::Remote => {
                let client = Arc::new(RemoteClient::new(
                    &cfg.base_url,
                    Duration::from_millis(cfg.timeout_ms),
                    RetryPolicy::new(cfg.retries, Duration::from_millis(cfg.backoff_ms)),
                    cfg.max_in_flight,
                )?);
                Ok(Gateway {
                    completer: Arc::new(RemoteCompleter::new(client.clone(), &cfg.model)),
                    embedder: Arc::new(RemoteEmbedder::new(client.clone(), &cfg.embedding_model)),
                    entailer: Arc::new(RemoteEntailer::new(client, &cfg.entailment_model)),
                    adapters: cfg.adapters.clone(),
                })
            }
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        req.validate()?;
        self.completer.complete(req)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Validation("embed called with an empty list".into()));
        }
        let out = self.embedder.embed(texts)?;
        check_embedding_batch(texts.len(), &out)?;
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        self.embedder.embed_one(text)
    }

    pub fn entails(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(Error::Validation(
                "entailment inputs must be non-empty".into(),
            ));
        }
        self.entailer.entails(premise, hypothesis)
    }
}
