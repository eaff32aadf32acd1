use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use ccinsights::config::AppConfig;
use ccinsights::gateway::BackendKind;
use ccinsights::pipeline::{run_pipeline, MODEL_FILE};
use ccinsights::synth::synthetic_transcripts;
use ccinsights::topics::{self, TopicModel};
use ccinsights::Gateway;
use ccinsights_cli::service::{router, ServiceState};
use ccinsights_cli::Context;
use serde_json::{json, Value};
use tower::ServiceExt;

const DAY: std::time::Duration = std::time::Duration::from_secs(86_400);

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = AppConfig::with_seed(7);
        let gw = Gateway::from_config(&cfg.gateway).unwrap();
        let build = dir.path().join("build");
        run_pipeline(&synthetic_transcripts(60, 7), &cfg, &gw, &build).unwrap();
        std::fs::create_dir(dir.path().join("svc")).unwrap();
        std::fs::copy(build.join(MODEL_FILE), dir.path().join("svc/model.json")).unwrap();
        Fixture { dir }
    }

    fn svc_dir(&self) -> PathBuf {
        self.dir.path().join("svc")
    }

    fn model_path(&self) -> PathBuf {
        self.svc_dir().join("model.json")
    }

    fn state_path(&self) -> PathBuf {
        self.svc_dir().join("state.json")
    }

    fn open_with(&self, cfg: AppConfig) -> Arc<ServiceState> {
        let gw = Gateway::from_config(&cfg.gateway).unwrap();
        let ctx = Context { cfg, gw };
        Arc::new(ServiceState::open(ctx, &self.model_path(), &self.state_path(), DAY).unwrap())
    }

    fn open(&self) -> Arc<ServiceState> {
        self.open_with(AppConfig::with_seed(7))
    }

    fn model(&self) -> TopicModel {
        topics::load(&self.model_path()).unwrap()
    }
}

async fn call(state: &Arc<ServiceState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Option<String>, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let retry = resp
        .headers()
        .get(header::RETRY_AFTER)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, retry, value)
}

fn member_text(model: &TopicModel) -> String {
    let id = &model.clusters[0].member_driver_ids[0];
    model.drivers[id].clone()
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[tokio::test]
async fn health_reports_model_size() {
    let f = Fixture::new();
    let s = f.open();
    let (status, _, body) = call(&s, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["clusters"].as_u64().unwrap() as usize, f.model().clusters.len());
}

#[tokio::test]
async fn classify_assigns_and_persists() {
    let f = Fixture::new();
    let before = f.model();
    let s = f.open();
    let text = member_text(&before);
    let (status, _, body) = call(&s, "POST", "/v1/classify", Some(json!({"transcript_id": "new-1", "driver": text}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["driver_id"], "new-1");
    assert_eq!(body["duplicate"], false);
    let sim = body["similarity"].as_f64().expect("fresh assignment has a similarity");
    assert!((-1.0..=1.0).contains(&sim));
    assert_eq!(body["model_version"].as_u64(), Some(before.version + 1));

    let after = f.model();
    assert_eq!(after.version, before.version + 1);
    assert_eq!(after.drivers.get("new-1"), Some(&text));
    assert!(f.state_path().exists());
    assert_eq!(file_names(&f.svc_dir()), vec!["model.json", "state.json"], "no temp files left behind");
}

#[tokio::test]
async fn duplicate_id_mutates_once() {
    let f = Fixture::new();
    let s = f.open();
    let text = member_text(&f.model());
    let req = json!({"transcript_id": "dup-1", "driver": text});
    let (_, _, first) = call(&s, "POST", "/v1/classify", Some(req.clone())).await;
    let bytes = std::fs::read(f.model_path()).unwrap();
    let (status, _, second) = call(&s, "POST", "/v1/classify", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(second["duplicate"], true);
    assert_eq!(second["similarity"], Value::Null);
    assert_eq!(second["model_version"], first["model_version"]);
    // a singleton has since become sub-cluster `id`; the replay reports that
    assert_eq!(second["target"]["id"], first["target"]["id"]);
    if first["target"]["kind"] == "outlier_singleton" {
        assert_eq!(second["target"]["kind"], "outlier_subcluster");
    } else {
        assert_eq!(second["target"]["kind"], first["target"]["kind"]);
    }
    assert_eq!(std::fs::read(f.model_path()).unwrap(), bytes);

    // an id already present in the base model is also a no-op
    let base_id = f.model().clusters[0].member_driver_ids[0].clone();
    let (_, _, third) = call(&s, "POST", "/v1/classify", Some(json!({"transcript_id": base_id, "driver": "anything"}))).await;
    assert_eq!(third["duplicate"], true);
    assert_eq!(third["target"]["kind"], "cluster");
}

#[tokio::test]
async fn restart_recovers_persisted_state() {
    let f = Fixture::new();
    let text = member_text(&f.model());
    let counts = {
        let s = f.open();
        let (_, _, r) = call(&s, "POST", "/v1/classify", Some(json!({"transcript_id": "keep-1", "driver": text}))).await;
        assert_eq!(r["duplicate"], false);
        let (_, _, t) = call(&s, "GET", "/v1/trends", None).await;
        t["current"].clone()
    };
    let s = f.open();
    let (_, _, r) = call(&s, "POST", "/v1/classify", Some(json!({"transcript_id": "keep-1", "driver": text}))).await;
    assert_eq!(r["duplicate"], true);
    let (_, _, t) = call(&s, "GET", "/v1/trends", None).await;
    assert_eq!(t["current"], counts);
    assert_eq!(t["current"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum::<u64>(), 1);
}

// Sync test: the remote gateway's blocking client must be built and dropped
// outside the runtime, as `run_blocking` does.
#[test]
fn backend_failure_is_503_with_retry_after() {
    let f = Fixture::new();
    let bytes = std::fs::read(f.model_path()).unwrap();
    let mut cfg = AppConfig::with_seed(7);
    cfg.gateway.kind = BackendKind::Remote;
    cfg.gateway.base_url = "http://127.0.0.1:9".into();
    cfg.gateway.retries = 0;
    cfg.gateway.timeout_ms = 500;
    let s = f.open_with(cfg);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (status, retry, body) =
        rt.block_on(call(&s, "POST", "/v1/classify", Some(json!({"transcript_id": "x", "driver": "my card was charged twice"}))));
    drop(rt);
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    assert_eq!(retry.as_deref(), Some("1"));
    assert_eq!(std::fs::read(f.model_path()).unwrap(), bytes, "failed request leaves the model untouched");
    assert!(!f.state_path().exists());
}

#[tokio::test]
async fn empty_driver_is_400() {
    let f = Fixture::new();
    let s = f.open();
    let (status, _, _) = call(&s, "POST", "/v1/classify", Some(json!({"transcript_id": "e", "driver": "  "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn transcript_ingest_is_idempotent() {
    let f = Fixture::new();
    let s = f.open();
    let t = json!({
        "id": "call-9",
        "utterances": [
            {"speaker": "agent", "text": "How can I help?"},
            {"speaker": "caller", "text": "The parcel was damaged in delivery and I need a refund."}
        ]
    });
    let (status, _, first) = call(&s, "POST", "/v1/transcripts", Some(t.clone())).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    assert_eq!(first["driver"]["transcript_id"], "call-9");
    assert_eq!(first["duplicate"], false);
    let (_, _, second) = call(&s, "POST", "/v1/transcripts", Some(t)).await;
    assert_eq!(second["duplicate"], true);
    assert_eq!(second["driver"], first["driver"]);
    assert_eq!(second["model_version"], first["model_version"]);
}

#[tokio::test]
async fn detect_closes_elapsed_windows() {
    let f = Fixture::new();
    let s = f.open();
    let text = member_text(&f.model());
    call(&s, "POST", "/v1/classify", Some(json!({"transcript_id": "w-1", "driver": text}))).await;
    let (_, _, before) = call(&s, "GET", "/v1/trends", None).await;
    let (status, _, events) = call(&s, "POST", "/v1/trends/detect", Some(json!({"now": "2100-01-01T00:00:00Z"}))).await;
    assert_eq!(status, StatusCode::OK, "{events}");
    assert!(events.is_array());
    let (_, _, after) = call(&s, "GET", "/v1/trends", None).await;
    assert_ne!(after["window_start"], before["window_start"]);
    assert!(after["current"].as_object().unwrap().is_empty());
}
