//! HTTP service over a persisted topic model and trend state.
//!
//! Backend calls run on the blocking pool outside the state lock. Every
//! mutation takes the one lock, commits, and persists the model and trend
//! state before the response goes out, so a restart sees exactly what
//! clients were told.

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ccinsights::driver_gen::generate_driver;
use ccinsights::stream::{commit, detect_trends, embed_driver, Target, TrendEvent, TrendState};
use ccinsights::topics::{self, TopicModel};
use ccinsights::transcript::parse_transcript_line;
use ccinsights::{CallDriver, Error, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, Context, ServeArgs};

/// Seconds a client should wait before retrying after a backend failure.
pub const RETRY_AFTER_SECS: u64 = 1;

pub struct Store {
    pub model: TopicModel,
    pub trends: TrendState,
}

pub struct ServiceState {
    pub ctx: Context,
    pub model_path: PathBuf,
    pub state_path: PathBuf,
    store: Mutex<Store>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ClassifyRequest {
    pub transcript_id: String,
    pub driver: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub driver_id: String,
    /// The id was already in the model; nothing changed.
    pub duplicate: bool,
    /// Absent only for a duplicate sitting in the outlier pool without a
    /// sub-cluster.
    pub target: Option<Target>,
    /// Reported for fresh assignments only.
    pub similarity: Option<f64>,
    pub label: Option<String>,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptResponse {
    pub driver: CallDriver,
    #[serde(flatten)]
    pub assignment: ClassifyResponse,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct DetectRequest {
    /// Defaults to the current time.
    pub now: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendsView {
    pub window_start: DateTime<Utc>,
    pub window_secs: u64,
    pub current: std::collections::BTreeMap<String, u64>,
    pub events: Vec<TrendEvent>,
}

fn existing(model: &TopicModel, id: &str) -> Option<ClassifyResponse> {
    if !model.drivers.contains_key(id) {
        return None;
    }
    let cluster = model.clusters.iter().find(|c| c.member_driver_ids.iter().any(|m| m == id));
    let (target, label) = match cluster {
        Some(c) => (Some(Target::Cluster { id: c.id }), Some(c.label.clone())),
        None => (
            model
                .outlier_subclusters
                .iter()
                .find(|s| s.member_driver_ids.iter().any(|m| m == id))
                .map(|s| Target::OutlierSubcluster { id: s.id }),
            None,
        ),
    };
    Some(ClassifyResponse {
        driver_id: id.to_string(),
        duplicate: true,
        target,
        similarity: None,
        label,
        model_version: model.version,
    })
}

impl ServiceState {
    /// Loads the model and the trend state (created when missing).
    pub fn open(ctx: Context, model_path: &Path, state_path: &Path, window: std::time::Duration) -> Result<Self> {
        let model = topics::load(model_path)?;
        let trends = if state_path.exists() {
            TrendState::load(state_path)?
        } else {
            TrendState::new(window, model.created_at)
        };
        Ok(ServiceState {
            ctx,
            model_path: model_path.to_path_buf(),
            state_path: state_path.to_path_buf(),
            store: Mutex::new(Store { model, trends }),
        })
    }

    fn lock(&self) -> Result<MutexGuard<'_, Store>> {
        self.store
            .lock()
            .map_err(|_| Error::Validation("service state lock poisoned".into()))
    }

    pub fn with_store<T>(&self, f: impl FnOnce(&Store) -> T) -> Result<T> {
        let guard = self.lock()?;
        Ok(f(&guard))
    }

    fn persist(&self, s: &Store) -> Result<()> {
        topics::persist(&s.model, &self.model_path)?;
        s.trends.save(&self.state_path)
    }

    /// Applies `f` to the store and persists; on any failure the in-memory
    /// state is rolled back.
    fn mutate<T>(&self, f: impl FnOnce(&mut Store) -> Result<T>) -> Result<T> {
        let mut guard = self.lock()?;
        let before_model = guard.model.clone();
        let before_trends = guard.trends.clone();
        let out = f(&mut guard).and_then(|v| self.persist(&guard).map(|_| v));
        if out.is_err() {
            guard.model = before_model;
            guard.trends = before_trends;
        }
        out
    }

    pub fn classify(&self, driver: CallDriver) -> Result<ClassifyResponse> {
        if driver.transcript_id.trim().is_empty() || driver.text.trim().is_empty() {
            return Err(Error::Validation("transcript_id and driver must be non-empty".into()));
        }
        {
            let s = self.lock()?;
            if let Some(r) = existing(&s.model, &driver.transcript_id) {
                return Ok(r);
            }
            if s.model.clusters.is_empty() {
                return Err(Error::Validation("model has no clusters to classify against".into()));
            }
        }
        let embedded = embed_driver(&driver, &self.ctx.gw)?;
        let id = driver.transcript_id.clone();
        let outcome = self.mutate(|s| {
            let r = commit(embedded, &mut s.model, &mut s.trends, &self.ctx.cfg.stream)?;
            Ok(ClassifyResponse {
                driver_id: r.driver_id,
                duplicate: false,
                target: Some(r.target),
                similarity: Some(r.similarity),
                label: r.label,
                model_version: s.model.version,
            })
        });
        match outcome {
            // a concurrent request for the same id won the race
            Err(Error::DuplicateId(_)) => Ok(existing(&self.lock()?.model, &id).expect("committed id is present")),
            other => other,
        }
    }

    pub fn generate(&self, transcript_json: &str) -> Result<CallDriver> {
        let t = parse_transcript_line(transcript_json, 1)?;
        generate_driver(&t, &self.ctx.cfg.drivers, &self.ctx.gw)
    }

    /// Driver generation plus classification, idempotent by transcript id.
    pub fn ingest(&self, transcript_json: &str) -> Result<TranscriptResponse> {
        let t = parse_transcript_line(transcript_json, 1)?;
        {
            let s = self.lock()?;
            if let Some(r) = existing(&s.model, &t.id) {
                let text = s.model.drivers[&t.id].clone();
                return Ok(TranscriptResponse {
                    driver: CallDriver::new(&t.id, text),
                    assignment: r,
                });
            }
        }
        let driver = generate_driver(&t, &self.ctx.cfg.drivers, &self.ctx.gw)?;
        let assignment = self.classify(driver.clone())?;
        Ok(TranscriptResponse { driver, assignment })
    }

    pub fn detect(&self, now: DateTime<Utc>) -> Result<Vec<TrendEvent>> {
        self.mutate(|s| Ok(detect_trends(&mut s.trends, &s.model, &self.ctx.cfg.stream, now)))
    }

    pub fn trends(&self) -> Result<TrendsView> {
        self.with_store(|s| TrendsView {
            window_start: s.trends.window_start,
            window_secs: s.trends.window_secs,
            current: s.trends.current.clone(),
            events: s.trends.events.clone(),
        })
    }
}

pub fn error_response(e: &Error) -> Response {
    let retryable = e.is_retryable();
    let status = if retryable {
        StatusCode::SERVICE_UNAVAILABLE
    } else {
        match e {
            Error::Validation(_)
            | Error::Parse { .. }
            | Error::DimensionMismatch { .. }
            | Error::EmptyDriver(_)
            | Error::DuplicateId(_) => StatusCode::BAD_REQUEST,
            Error::Job { source, .. } if !source.is_retryable() => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    };
    let mut body = serde_json::json!({ "error": e.to_string(), "retryable": retryable });
    if retryable {
        body["retry_after_secs"] = RETRY_AFTER_SECS.into();
        return (status, [(header::RETRY_AFTER, RETRY_AFTER_SECS.to_string())], Json(body)).into_response();
    }
    (status, Json(body)).into_response()
}

async fn blocking<T, F>(state: Arc<ServiceState>, endpoint: &'static str, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&ServiceState) -> Result<T> + Send + 'static,
{
    let t0 = Instant::now();
    let out = tokio::task::spawn_blocking(move || f(&state)).await;
    let ms = t0.elapsed().as_millis() as u64;
    match out {
        Ok(Ok(v)) => {
            tracing::info!(endpoint, ms, "request ok");
            Json(v).into_response()
        }
        Ok(Err(e)) => {
            tracing::warn!(endpoint, ms, error = %e, "request failed");
            error_response(&e)
        }
        Err(join) => {
            tracing::error!(endpoint, ms, error = %join, "handler panicked");
            (StatusCode::INTERNAL_SERVER_ERROR, Json(serde_json::json!({ "error": "internal error" }))).into_response()
        }
    }
}

async fn health(State(s): State<Arc<ServiceState>>) -> Response {
    blocking(s, "healthz", |s| {
        s.with_store(|st| {
            serde_json::json!({
                "status": "ok",
                "model_version": st.model.version,
                "clusters": st.model.clusters.len(),
                "drivers": st.model.drivers.len(),
            })
        })
    })
    .await
}

async fn classify_handler(State(s): State<Arc<ServiceState>>, Json(req): Json<ClassifyRequest>) -> Response {
    blocking(s, "classify", move |s| s.classify(CallDriver::new(req.transcript_id, req.driver))).await
}

async fn drivers_handler(State(s): State<Arc<ServiceState>>, body: String) -> Response {
    blocking(s, "drivers", move |s| s.generate(&body)).await
}

async fn transcripts_handler(State(s): State<Arc<ServiceState>>, body: String) -> Response {
    blocking(s, "transcripts", move |s| s.ingest(&body)).await
}

async fn trends_handler(State(s): State<Arc<ServiceState>>) -> Response {
    blocking(s, "trends", |s| s.trends()).await
}

async fn detect_handler(State(s): State<Arc<ServiceState>>, body: Option<Json<DetectRequest>>) -> Response {
    let now = body.and_then(|Json(r)| r.now).unwrap_or_else(Utc::now);
    blocking(s, "trends_detect", move |s| s.detect(now)).await
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/classify", post(classify_handler))
        .route("/v1/drivers", post(drivers_handler))
        .route("/v1/transcripts", post(transcripts_handler))
        .route("/v1/trends", get(trends_handler))
        .route("/v1/trends/detect", post(detect_handler))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested; draining");
}

pub fn run_blocking(ctx: Context, a: &ServeArgs) -> CliResult<()> {
    if !a.model.exists() {
        return Err(CliError::Input(format!("missing model {}", a.model.display())));
    }
    let state = Arc::new(ServiceState::open(ctx, &a.model, &a.state, a.window)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    // the last handle to the state is released here, outside the runtime:
    // blocking HTTP clients refuse to drop inside async context
    let served = state.clone();
    let out = rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .map_err(|e| CliError::Input(format!("cannot bind {}: {e}", a.addr)))?;
        tracing::info!(addr = %a.addr, "listening");
        serve(listener, served, shutdown_signal())
            .await
            .map_err(|e| CliError::Core(Error::io("http server", e)))
    });
    drop(rt);
    drop(state);
    out
}
