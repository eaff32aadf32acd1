//! The full offline chain: transcripts, drivers, topic model, labels, E2E
//! score, FAQs. Each artifact is written atomically into one directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::driver_gen::{generate_batch, ItemError};
use crate::error::Result;
use crate::faq::faq_for_model;
use crate::gateway::Gateway;
use crate::io::{to_jsonl, write_atomic};
use crate::topics::{build_topic_model, e2e_score, label_model, persist, E2eScore};
use crate::transcript::Transcript;

pub const DRIVERS_FILE: &str = "drivers.jsonl";
pub const MODEL_FILE: &str = "topic_model.json";
pub const E2E_FILE: &str = "e2e.json";
pub const FAQ_FILE: &str = "faqs.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    #[serde(flatten)]
    pub error: ItemError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub transcripts: usize,
    pub drivers: usize,
    pub clusters: usize,
    pub outliers: usize,
    pub dbcv_loss: Option<f64>,
    pub e2e: Option<E2eScore>,
    pub faqs: usize,
    pub item_errors: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Runs every stage and writes the artifacts under `out_dir`.
pub fn run_pipeline(ts: &[Transcript], cfg: &AppConfig, gw: &Gateway, out_dir: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| crate::Error::io(out_dir, e))?;
    let path = |name: &str| -> PathBuf { out_dir.join(name) };
    let mut errors: Vec<StageError> = Vec::new();
    let tag = |stage: &str, v: Vec<ItemError>| -> Vec<StageError> {
        v.into_iter()
            .map(|error| StageError {
                stage: stage.into(),
                error,
            })
            .collect()
    };

    let t0 = Instant::now();
    let batch = generate_batch(ts, &cfg.drivers, gw)?;
    write_atomic(&path(DRIVERS_FILE), to_jsonl(&batch.drivers).as_bytes())?;
    errors.extend(tag("drivers", batch.errors));
    tracing::info!(stage = "drivers", count = batch.drivers.len(), ms = t0.elapsed().as_millis() as u64, "stage done");

    let t0 = Instant::now();
    let (mut model, _) = build_topic_model(
        &batch.drivers,
        gw,
        &cfg.clustering.grid()?,
        &cfg.labeling,
        cfg.clustering.created_at(),
    )?;
    tracing::info!(stage = "topics_build", clusters = model.clusters.len(), ms = t0.elapsed().as_millis() as u64, "stage done");

    let t0 = Instant::now();
    errors.extend(tag("topics_label", label_model(&mut model, gw, &cfg.labeling)?));
    persist(&model, &path(MODEL_FILE))?;
    tracing::info!(stage = "topics_label", ms = t0.elapsed().as_millis() as u64, "stage done");

    let e2e = if model.clusters.is_empty() || model.clusters.iter().any(|c| !c.is_labeled()) {
        tracing::warn!(stage = "eval_e2e", "skipped: no clusters or unlabeled clusters");
        None
    } else {
        let score = e2e_score(&model, gw, cfg.e2e)?;
        write_json(&path(E2E_FILE), &score)?;
        Some(score)
    };

    let t0 = Instant::now();
    let faq = faq_for_model(&model, ts, gw, &cfg.faq, cfg.seed)?;
    write_atomic(&path(FAQ_FILE), to_jsonl(&faq.faqs).as_bytes())?;
    errors.extend(tag("faq", faq.errors));
    tracing::info!(stage = "faq", count = faq.faqs.len(), ms = t0.elapsed().as_millis() as u64, "stage done");

    write_atomic(&path(ERRORS_FILE), to_jsonl(&errors).as_bytes())?;
    let summary = PipelineSummary {
        transcripts: ts.len(),
        drivers: batch.drivers.len(),
        clusters: model.clusters.len(),
        outliers: model.outlier_pool.len(),
        dbcv_loss: model.validity.map(|v| v.loss),
        e2e,
        faqs: faq.faqs.len(),
        item_errors: errors.len(),
    };
    write_json(&path(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_transcripts;

    #[test]
    fn small_pipeline_runs_and_is_reproducible() {
        let ts = synthetic_transcripts(60, 11);
        let mut cfg = AppConfig::with_seed(11);
        cfg.clustering.grid = "5,10;1,5".into();
        let gw = Gateway::mock();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = run_pipeline(&ts, &cfg, &gw, a.path()).unwrap();
        let sb = run_pipeline(&ts, &cfg, &gw, b.path()).unwrap();
        assert_eq!(sa, sb);
        assert!(sa.clusters >= 2, "{sa:?}");
        assert!(sa.e2e.is_some());
        for f in [DRIVERS_FILE, MODEL_FILE, E2E_FILE, FAQ_FILE, ERRORS_FILE, SUMMARY_FILE] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
