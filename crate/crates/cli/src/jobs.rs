//! Stage jobs behind each subcommand. Inputs are checked before any work
//! starts; every output goes through an atomic write.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ccinsights::compress::{build_scorer, compress, format_sweep_table, sweep_compression, CompressionConfig, ScorerKind};
use ccinsights::costsim::{emit_table, estimate, PricingConfig};
use ccinsights::driver_gen::{generate_batch, ItemError};
use ccinsights::faq::faq_for_model;
use ccinsights::gateway::{BackendKind, RemoteClient, RemoteTokenScorer, RetryPolicy};
use ccinsights::io::{read_jsonl, to_jsonl, write_atomic};
use ccinsights::metrics::{format_quality_table, length_report, length_table, score_call_drivers, score_without_penalty, QualityRow};
use ccinsights::pipeline::run_pipeline;
use ccinsights::stream::{classify, detect_trends, recluster_outliers, TrendState};
use ccinsights::synth::synthetic_transcripts;
use ccinsights::topics::{self, build_topic_model, e2e_score, label_model, TopicModel};
use ccinsights::transcript::{ingest_transcripts, transcripts_to_jsonl};
use ccinsights::CallDriver;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Drivers,
    Compress,
    Sweep,
    TopicsBuild,
    TopicsLabel,
    Classify,
    Trends,
    Faq,
    EvalCd,
    EvalE2e,
    EvalLengths,
    Cost,
    Pipeline,
    Synth,
}

/// What a stage reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub stage: Stage,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl JobSpec {
    pub fn new(stage: Stage) -> Self {
        JobSpec {
            stage,
            inputs: vec![],
            outputs: vec![],
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.to_path_buf());
        self
    }

    /// Fails with an input error when a required input is missing; creates
    /// output directories.
    pub fn prepare(&self) -> CliResult<()> {
        for p in &self.inputs {
            if !p.exists() {
                return Err(CliError::Input(format!("{:?}: missing input {}", self.stage, p.display())));
            }
        }
        for p in &self.outputs {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        tracing::info!(stage = ?self.stage, inputs = self.inputs.len(), outputs = self.outputs.len(), "job start");
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

/// Writes to stdout. A closed reader (e.g. `| head`) is not an error.
fn stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn print_json<T: Serialize>(value: &T) {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    stdout(&text);
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            print_json(value);
            Ok(())
        }
    }
}

fn report_errors<T: Serialize>(errors: &[T], path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => write_atomic(p, to_jsonl(errors).as_bytes())?,
        None if !errors.is_empty() => eprint!("{}", to_jsonl(errors)),
        None => {}
    }
    Ok(())
}

fn timed<T>(stage: Stage, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
    let t0 = std::time::Instant::now();
    let out = f();
    tracing::info!(stage = ?stage, ok = out.is_ok(), ms = t0.elapsed().as_millis() as u64, "job done");
    out
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    let Cli { config, seed, command } = cli;
    // cost and synth need no backends; synth only needs a seed
    match command {
        Command::Cost(a) => return timed(Stage::Cost, || cost(&a)),
        Command::Synth(a) => {
            let seed = match (&config, seed) {
                (_, Some(s)) => s,
                (Some(p), None) => AppConfig::load(p)?.seed,
                (None, None) => return Err(CliError::Input("synth needs --seed or --config".into())),
            };
            return timed(Stage::Synth, || synth(&a, seed));
        }
        _ => {}
    }
    let ctx = Context::load(config.as_deref(), seed)?;
    match command {
        Command::Drivers(a) => timed(Stage::Drivers, || drivers(&ctx, &a)),
        Command::Compress(a) => timed(Stage::Compress, || compress_cmd(&ctx, &a)),
        Command::Sweep(a) => timed(Stage::Sweep, || sweep(&ctx, &a)),
        Command::Topics(TopicsCommand::Build(a)) => timed(Stage::TopicsBuild, || topics_build(&ctx, &a)),
        Command::Topics(TopicsCommand::Label(a)) => timed(Stage::TopicsLabel, || topics_label(&ctx, &a)),
        Command::Classify(a) => timed(Stage::Classify, || classify_cmd(&ctx, &a)),
        Command::Trends(a) => timed(Stage::Trends, || trends(&ctx, &a)),
        Command::Faq(a) => timed(Stage::Faq, || faq(&ctx, &a)),
        Command::Eval(EvalCommand::Cd(a)) => timed(Stage::EvalCd, || eval_cd(&ctx, &a)),
        Command::Eval(EvalCommand::E2e(a)) => timed(Stage::EvalE2e, || eval_e2e(&ctx, &a)),
        Command::Eval(EvalCommand::Lengths(a)) => timed(Stage::EvalLengths, || eval_lengths(&a)),
        Command::Pipeline(a) => timed(Stage::Pipeline, || pipeline(&ctx, &a)),
        Command::Serve(a) => service::run_blocking(ctx, &a),
        Command::Cost(_) | Command::Synth(_) => unreachable!("handled above"),
    }
}

pub fn drivers(ctx: &Context, a: &DriversArgs) -> CliResult<()> {
    let mut spec = JobSpec::new(Stage::Drivers).input(&a.transcripts).output(&a.out);
    if let Some(e) = &a.errors {
        spec = spec.output(e);
    }
    spec.prepare()?;
    let ts = ingest_transcripts(&a.transcripts)?;
    let batch = generate_batch(&ts, &ctx.cfg.drivers, &ctx.gw)?;
    write_atomic(&a.out, to_jsonl(&batch.drivers).as_bytes())?;
    report_errors(&batch.errors, a.errors.as_deref())?;
    eprintln!("{} drivers, {} errors", batch.drivers.len(), batch.errors.len());
    Ok(())
}

fn remote_token_scorer(ctx: &Context) -> CliResult<Option<RemoteTokenScorer>> {
    if ctx.cfg.compression.scorer != ScorerKind::Remote {
        return Ok(None);
    }
    let g = &ctx.cfg.gateway;
    if g.kind != BackendKind::Remote {
        return Err(CliError::Input("compression.scorer = \"remote\" needs gateway.kind = \"remote\"".into()));
    }
    let client = RemoteClient::new(
        &g.base_url,
        std::time::Duration::from_millis(g.timeout_ms),
        RetryPolicy::new(g.retries, std::time::Duration::from_millis(g.backoff_ms)),
        g.max_in_flight,
    )?;
    Ok(Some(RemoteTokenScorer::new(std::sync::Arc::new(client), &g.token_scorer_model)))
}

pub fn compress_cmd(ctx: &Context, a: &CompressArgs) -> CliResult<()> {
    JobSpec::new(Stage::Compress).input(&a.transcripts).output(&a.out).prepare()?;
    let cfg = CompressionConfig {
        target_ratio: a.ratio.unwrap_or(ctx.cfg.compression.target_ratio),
        ..ctx.cfg.compression.clone()
    };
    cfg.validate()?;
    let ts = ingest_transcripts(&a.transcripts)?;
    let scorer = build_scorer(cfg.scorer, &ts, remote_token_scorer(ctx)?)?;
    let out = ts
        .iter()
        .map(|t| compress(t, scorer.as_ref(), &cfg))
        .collect::<ccinsights::Result<Vec<_>>>()?;
    write_atomic(&a.out, transcripts_to_jsonl(&out).as_bytes())?;
    Ok(())
}

fn read_drivers(path: &Path) -> CliResult<Vec<CallDriver>> {
    Ok(read_jsonl(path)?)
}

pub fn sweep(ctx: &Context, a: &SweepArgs) -> CliResult<()> {
    let mut spec = JobSpec::new(Stage::Sweep).input(&a.transcripts).input(&a.refs);
    if let Some(o) = &a.out {
        spec = spec.output(o);
    }
    spec.prepare()?;
    let ts = ingest_transcripts(&a.transcripts)?;
    let refs: HashMap<String, String> = read_drivers(&a.refs)?
        .into_iter()
        .map(|d| (d.transcript_id, d.text))
        .collect();
    let scorer = build_scorer(ctx.cfg.compression.scorer, &ts, remote_token_scorer(ctx)?)?;
    let rows = sweep_compression(&ts, &a.ratios, scorer.as_ref(), &refs, &ctx.cfg.drivers, &ctx.gw, ctx.cfg.metrics.alpha)?;
    if let Some(o) = &a.out {
        write_json(o, &rows)?;
    }
    stdout(&format_sweep_table(&rows));
    Ok(())
}

pub fn topics_build(ctx: &Context, a: &TopicsBuildArgs) -> CliResult<()> {
    JobSpec::new(Stage::TopicsBuild).input(&a.drivers).output(&a.out).prepare()?;
    let mut clustering = ctx.cfg.clustering.clone();
    if let Some(g) = &a.grid {
        clustering.grid = g.clone();
    }
    let drivers = read_drivers(&a.drivers)?;
    let (model, grid) = build_topic_model(&drivers, &ctx.gw, &clustering.grid()?, &ctx.cfg.labeling, clustering.created_at())?;
    topics::persist(&model, &a.out)?;
    eprintln!(
        "{} clusters, {} outliers, min_cluster_size {} min_samples {}, DBCV loss {:.4}",
        model.clusters.len(),
        model.outlier_pool.len(),
        grid.params.min_cluster_size,
        grid.params.min_samples,
        grid.score.loss
    );
    Ok(())
}

pub fn topics_label(ctx: &Context, a: &TopicsLabelArgs) -> CliResult<()> {
    let out = a.out.clone().unwrap_or_else(|| a.model.clone());
    JobSpec::new(Stage::TopicsLabel).input(&a.model).output(&out).prepare()?;
    let mut model = topics::load(&a.model)?;
    let errors = label_model(&mut model, &ctx.gw, &ctx.cfg.labeling)?;
    topics::persist(&model, &out)?;
    report_errors(&errors, None)?;
    Ok(())
}

fn open_state(path: &Path, window: std::time::Duration, start: DateTime<Utc>) -> CliResult<TrendState> {
    if path.exists() {
        Ok(TrendState::load(path)?)
    } else {
        Ok(TrendState::new(window, start))
    }
}

/// A driver that could not be assigned; the batch carries on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyError {
    pub driver_id: String,
    pub error: String,
}

pub fn classify_cmd(ctx: &Context, a: &ClassifyArgs) -> CliResult<()> {
    // the state file is created on first use, so it is only an output here
    JobSpec::new(Stage::Classify).input(&a.model).input(&a.drivers).output(&a.out).output(&a.state).prepare()?;
    let mut model: TopicModel = topics::load(&a.model)?;
    let mut state = open_state(&a.state, a.window, a.start.unwrap_or(model.created_at))?;
    let drivers = read_drivers(&a.drivers)?;
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for d in &drivers {
        match classify(d, &mut model, &mut state, &ctx.gw, &ctx.cfg.stream) {
            Ok(r) => results.push(r),
            Err(e @ (Error::Validation(_) | Error::Config(_))) => return Err(e.into()),
            Err(e) => {
                tracing::warn!(item = %d.transcript_id, error = %e, "driver not assigned");
                errors.push(ClassifyError {
                    driver_id: d.transcript_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    topics::persist(&model, &a.model)?;
    state.save(&a.state)?;
    write_atomic(&a.out, to_jsonl(&results).as_bytes())?;
    report_errors(&errors, None)?;
    eprintln!("{} assigned, {} errors", results.len(), errors.len());
    Ok(())
}

pub fn trends(ctx: &Context, a: &TrendsArgs) -> CliResult<()> {
    let mut spec = JobSpec::new(Stage::Trends).input(&a.model).output(&a.state);
    if let Some(o) = &a.out {
        spec = spec.output(o);
    }
    spec.prepare()?;
    let mut model = topics::load(&a.model)?;
    let mut state = open_state(&a.state, a.window, model.created_at)?;
    if a.recluster {
        let created = recluster_outliers(&mut model, &ctx.gw, &ctx.cfg.stream)?;
        if !created.is_empty() {
            topics::persist(&model, &a.model)?;
        }
    }
    let events = detect_trends(&mut state, &model, &ctx.cfg.stream, a.now.unwrap_or_else(Utc::now));
    state.save(&a.state)?;
    match &a.out {
        Some(o) => write_atomic(o, to_jsonl(&events).as_bytes())?,
        None => stdout(&to_jsonl(&events)),
    }
    Ok(())
}

pub fn faq(ctx: &Context, a: &FaqArgs) -> CliResult<()> {
    let mut spec = JobSpec::new(Stage::Faq).input(&a.model).input(&a.transcripts).output(&a.out);
    if let Some(e) = &a.errors {
        spec = spec.output(e);
    }
    spec.prepare()?;
    let model = topics::load(&a.model)?;
    let ts = ingest_transcripts(&a.transcripts)?;
    let run = faq_for_model(&model, &ts, &ctx.gw, &ctx.cfg.faq, ctx.cfg.seed)?;
    write_atomic(&a.out, to_jsonl(&run.faqs).as_bytes())?;
    report_errors::<ItemError>(&run.errors, a.errors.as_deref())?;
    Ok(())
}

/// Pairs references and hypotheses by transcript id, in reference order.
pub fn pair_drivers(refs: &[CallDriver], hyps: &[CallDriver]) -> (Vec<(String, String)>, Vec<String>) {
    let by_id: HashMap<&str, &str> = hyps.iter().map(|d| (d.transcript_id.as_str(), d.text.as_str())).collect();
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for r in refs {
        match by_id.get(r.transcript_id.as_str()) {
            Some(h) => pairs.push((r.text.clone(), h.to_string())),
            None => unmatched.push(r.transcript_id.clone()),
        }
    }
    (pairs, unmatched)
}

pub fn eval_cd(ctx: &Context, a: &EvalCdArgs) -> CliResult<()> {
    let mut spec = JobSpec::new(Stage::EvalCd).input(&a.refs).input(&a.hyps);
    if let Some(o) = &a.out {
        spec = spec.output(o);
    }
    spec.prepare()?;
    let (pairs, unmatched) = pair_drivers(&read_drivers(&a.refs)?, &read_drivers(&a.hyps)?);
    for id in &unmatched {
        tracing::warn!(item = %id, "reference has no generated driver");
    }
    let entailer = ctx.gw.entailer.as_ref();
    let alpha = a.alpha.unwrap_or(ctx.cfg.metrics.alpha);
    let raw = score_without_penalty(&pairs, entailer)?;
    let row = if a.no_penalty {
        QualityRow {
            model: a.name.clone(),
            cd_without_penalty: Some(raw),
            ..Default::default()
        }
    } else {
        let score = score_call_drivers(&pairs, entailer, alpha)?;
        if a.format == Format::Json {
            return emit_json(a.out.as_deref(), &score);
        }
        QualityRow {
            model: a.name.clone(),
            cd_without_penalty: Some(raw),
            cd: Some(score.s_cd),
            ..Default::default()
        }
    };
    match a.format {
        Format::Json => emit_json(a.out.as_deref(), &serde_json::json!({ "raw_entail_rate": raw, "n": pairs.len() })),
        Format::Table => emit_text(a.out.as_deref(), &format_quality_table(&[row])),
    }
}

fn emit_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            stdout(&text);
            Ok(())
        }
    }
}

pub fn eval_e2e(ctx: &Context, a: &EvalE2eArgs) -> CliResult<()> {
    let mut spec = JobSpec::new(Stage::EvalE2e).input(&a.model);
    if let Some(o) = &a.out {
        spec = spec.output(o);
    }
    spec.prepare()?;
    let model = topics::load(&a.model)?;
    let score = e2e_score(&model, &ctx.gw, ctx.cfg.e2e)?;
    match a.format {
        Format::Json => emit_json(a.out.as_deref(), &score),
        Format::Table => emit_text(
            a.out.as_deref(),
            &format_quality_table(&[QualityRow {
                model: a.name.clone(),
                e2e: Some(score.s_e2e),
                dbcv_loss: model.validity.map(|v| v.loss),
                ..Default::default()
            }]),
        ),
    }
}

pub fn eval_lengths(a: &EvalLengthsArgs) -> CliResult<()> {
    let mut series = Vec::new();
    for s in &a.series {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--series expects name=path, got {s:?}")))?;
        let path = Path::new(path);
        JobSpec::new(Stage::EvalLengths).input(path).prepare()?;
        let texts = read_drivers(path)?.into_iter().map(|d| d.text).collect();
        series.push((name.to_string(), texts));
    }
    let report = length_report(&series);
    match a.format {
        Format::Json => emit_json(None, &report),
        Format::Table => emit_text(None, &length_table(&report)),
    }
}

pub fn cost(a: &CostArgs) -> CliResult<()> {
    JobSpec::new(Stage::Cost).input(&a.pricing).prepare()?;
    let mut cfg = PricingConfig::load(&a.pricing)?;
    if let Some(n) = a.transcripts {
        cfg.workload.num_transcripts = n;
    }
    let est = estimate(&cfg.models, &cfg.workload)?;
    match a.format {
        Format::Json => emit_json(None, &est),
        Format::Table => emit_text(None, &emit_table(&est)),
    }
}

pub fn pipeline(ctx: &Context, a: &PipelineArgs) -> CliResult<()> {
    JobSpec::new(Stage::Pipeline).input(&a.transcripts).output(&a.out_dir.join("summary.json")).prepare()?;
    let ts = ingest_transcripts(&a.transcripts)?;
    let summary = run_pipeline(&ts, &ctx.cfg, &ctx.gw, &a.out_dir)?;
    print_json(&summary);
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> CliResult<()> {
    JobSpec::new(Stage::Synth).output(&a.out).prepare()?;
    let ts = synthetic_transcripts(a.n, seed);
    write_atomic(&a.out, transcripts_to_jsonl(&ts).as_bytes())?;
    Ok(())
}
