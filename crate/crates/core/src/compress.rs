//! Transcript compression by token pruning.
//!
//! Every whitespace token gets a retain score; the top `ceil(ratio * N)` are
//! kept (ties go to the earlier token) and written back in original order.
//! Speaker roles are structure, not tokens, and are never pruned.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::driver_gen::{generate_batch, DriverGenConfig};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, RemoteTokenScorer};
use crate::metrics::{score_call_drivers, CdScore};
use crate::text::content_form;
use crate::transcript::{Transcript, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub utterance_index: usize,
    pub position: usize,
    /// Higher means keep.
    pub retain_score: f64,
}

pub trait TokenScorer: Send + Sync {
    fn score(&self, t: &Transcript) -> Result<Vec<TokenScore>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Heuristic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    pub target_ratio: f64,
    pub scorer: ScorerKind,
    pub protect_structure: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            target_ratio: 1.0,
            scorer: ScorerKind::Heuristic,
            protect_structure: true,
        }
    }
}

impl CompressionConfig {
    pub fn with_ratio(target_ratio: f64) -> Self {
        CompressionConfig {
            target_ratio,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(Error::Validation(format!(
                "compression ratio must be in (0, 1], got {}",
                self.target_ratio
            )));
        }
        Ok(())
    }
}

/// Stop-words and punctuation score 0; any other token scores
/// `1 + ln(1 + N / df)` where `df` counts batch transcripts containing it.
#[derive(Debug, Clone, Default)]
pub struct HeuristicScorer {
    doc_freq: HashMap<String, usize>,
    n_docs: usize,
}

impl HeuristicScorer {
    pub fn fit(batch: &[Transcript]) -> Self {
        let mut doc_freq = HashMap::new();
        for t in batch {
            let terms: HashSet<String> = t
                .utterances
                .iter()
                .flat_map(|u| u.text.split_whitespace().filter_map(content_form))
                .collect();
            for term in terms {
                *doc_freq.entry(term).or_insert(0) += 1;
            }
        }
        HeuristicScorer {
            doc_freq,
            n_docs: batch.len(),
        }
    }

    pub fn token_score(&self, token: &str) -> f64 {
        match content_form(token) {
            None => 0.0,
            Some(term) => {
                let df = self.doc_freq.get(&term).copied().unwrap_or(0).max(1);
                1.0 + (1.0 + self.n_docs.max(1) as f64 / df as f64).ln()
            }
        }
    }
}

impl TokenScorer for HeuristicScorer {
    fn score(&self, t: &Transcript) -> Result<Vec<TokenScore>> {
        Ok(t.utterances
            .iter()
            .flat_map(|u| {
                u.text
                    .split_whitespace()
                    .enumerate()
                    .map(move |(position, tok)| TokenScore {
                        token: tok.to_string(),
                        utterance_index: u.index,
                        position,
                        retain_score: self.token_score(tok),
                    })
            })
            .collect())
    }
}

/// Scores tokens with a served token-classification model.
pub struct RemoteScorer {
    inner: RemoteTokenScorer,
}

impl RemoteScorer {
    pub fn new(inner: RemoteTokenScorer) -> Self {
        RemoteScorer { inner }
    }
}

impl TokenScorer for RemoteScorer {
    fn score(&self, t: &Transcript) -> Result<Vec<TokenScore>> {
        let mut scores: Vec<TokenScore> = HeuristicScorer::default().score(t)?;
        if scores.is_empty() {
            return Ok(scores);
        }
        let tokens: Vec<String> = scores.iter().map(|s| s.token.clone()).collect();
        for (s, r) in scores.iter_mut().zip(self.inner.retain_scores(&tokens)?) {
            s.retain_score = r;
        }
        Ok(scores)
    }
}

pub fn score_tokens(t: &Transcript, scorer: &dyn TokenScorer) -> Result<Vec<TokenScore>> {
    scorer.score(t)
}

/// `ceil(ratio * total)`, robust to products like `0.7 * 10` landing a hair
/// above an integer.
pub fn keep_count(ratio: f64, total: usize) -> usize {
    let exact = ratio * total as f64;
    let rounded = exact.round();
    let k = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (k.max(0.0) as usize).min(total)
}

/// Keeps the top tokens of `scores` (which must be in transcript order) and
/// rebuilds the transcript. Emptied utterances are dropped.
pub fn compress_with_scores(t: &Transcript, scores: &[TokenScore], ratio: f64) -> Transcript {
    if ratio >= 1.0 {
        return t.clone();
    }
    let keep = keep_count(ratio, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps earlier tokens first among equal scores
    order.sort_by(|&a, &b| scores[b].retain_score.total_cmp(&scores[a].retain_score));
    let kept: HashSet<(usize, usize)> = order[..keep]
        .iter()
        .map(|&i| (scores[i].utterance_index, scores[i].position))
        .collect();

    let utterances = t
        .utterances
        .iter()
        .filter_map(|u| {
            let text: Vec<&str> = u
                .text
                .split_whitespace()
                .enumerate()
                .filter(|(p, _)| kept.contains(&(u.index, *p)))
                .map(|(_, tok)| tok)
                .collect();
            (!text.is_empty()).then(|| Utterance {
                speaker: u.speaker,
                text: text.join(" "),
                index: u.index,
                start_ms: u.start_ms,
                end_ms: u.end_ms,
            })
        })
        .collect();
    Transcript {
        id: t.id.clone(),
        domain_tag: t.domain_tag.clone(),
        utterances,
    }
}

pub fn compress(t: &Transcript, scorer: &dyn TokenScorer, cfg: &CompressionConfig) -> Result<Transcript> {
    cfg.validate()?;
    if cfg.target_ratio >= 1.0 {
        return Ok(t.clone());
    }
    let scores = scorer.score(t)?;
    Ok(compress_with_scores(t, &scores, cfg.target_ratio))
}

pub fn build_scorer(kind: ScorerKind, batch: &[Transcript], remote: Option<RemoteTokenScorer>) -> Result<Arc<dyn TokenScorer>> {
    match (kind, remote) {
        (ScorerKind::Heuristic, _) => Ok(Arc::new(HeuristicScorer::fit(batch))),
        (ScorerKind::Remote, Some(r)) => Ok(Arc::new(RemoteScorer::new(r))),
        (ScorerKind::Remote, None) => Err(Error::Config(
            "remote token scorer requires a remote gateway".into(),
        )),
    }
}

/// "1.4x", "2x", "3x" from a retained fraction.
pub fn compression_factor_label(ratio: f64) -> String {
    let f = format!("{:.1}", 1.0 / ratio);
    format!("{}x", f.strip_suffix(".0").unwrap_or(&f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub compression: String,
    pub score: Option<CdScore>,
    pub drivers: usize,
    pub errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Compresses every transcript at each ratio, regenerates drivers and scores
/// them against `references` (transcript id -> reference driver).
pub fn sweep_compression(
    ts: &[Transcript],
    ratios: &[f64],
    scorer: &dyn TokenScorer,
    references: &HashMap<String, String>,
    driver_cfg: &DriverGenConfig,
    gw: &Gateway,
    alpha: f64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let cfg = CompressionConfig::with_ratio(ratio);
        cfg.validate()?;
        let cell = (|| -> Result<(CdScore, usize, usize)> {
            let compressed: Vec<Transcript> = ts
                .iter()
                .map(|t| compress(t, scorer, &cfg))
                .collect::<Result<_>>()?;
            let batch = generate_batch(&compressed, driver_cfg, gw)?;
            let pairs: Vec<(String, String)> = batch
                .drivers
                .iter()
                .filter_map(|d| references.get(&d.transcript_id).map(|r| (r.clone(), d.text.clone())))
                .collect();
            let score = score_call_drivers(&pairs, gw.entailer.as_ref(), alpha)?;
            Ok((score, batch.drivers.len(), batch.errors.len()))
        })();
        rows.push(match cell {
            Ok((score, drivers, errors)) => SweepRow {
                ratio,
                compression: compression_factor_label(ratio),
                score: Some(score),
                drivers,
                errors,
                failure: None,
            },
            Err(e) => SweepRow {
                ratio,
                compression: compression_factor_label(ratio),
                score: None,
                drivers: 0,
                errors: 0,
                failure: Some(e.to_string()),
            },
        });
    }
    Ok(rows)
}

pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("Input% | Compression ratio | Call Driver Score\n");
    for r in rows {
        let score = r
            .score
            .map_or_else(|| "error".to_string(), |s| format!("{:.2}", s.s_cd * 100.0));
        let _ = writeln!(
            out,
            "{}% | {} | {score}",
            (r.ratio * 100.0).round(),
            r.compression
        );
    }
    out
}
