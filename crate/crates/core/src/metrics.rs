//! Call-driver quality metric and report assembly.
//!
//! The call-driver score multiplies the rate of positive entailment verdicts
//! (reference as premise, generated driver as hypothesis) by a corpus length
//! penalty `min(1, alpha * sqrt(sum ref words / sum hyp words))`, which
//! punishes generators that pad their drivers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Entailer, EntailmentVerdict};
use crate::text::word_count;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdScore {
    pub s_cd: f64,
    pub l_p: f64,
    pub raw_entail_rate: f64,
    pub n: usize,
    pub positives: usize,
    pub sum_ref_len: usize,
    pub sum_hyp_len: usize,
    pub alpha: f64,
    /// Set when the hypothesis corpus is empty; the score is then 0.
    #[serde(default)]
    pub degenerate: bool,
}

pub fn length_penalty(sum_ref_len: usize, sum_hyp_len: usize, alpha: f64) -> f64 {
    (alpha * (sum_ref_len as f64 / sum_hyp_len as f64).sqrt()).min(1.0)
}

/// Assembles a score from per-pair entailment outcomes and corpus lengths.
pub fn cd_score(positives: usize, n: usize, sum_ref_len: usize, sum_hyp_len: usize, alpha: f64) -> CdScore {
    if sum_hyp_len == 0 || n == 0 {
        return CdScore {
            s_cd: 0.0,
            l_p: 0.0,
            raw_entail_rate: 0.0,
            n,
            positives: 0,
            sum_ref_len,
            sum_hyp_len,
            alpha,
            degenerate: true,
        };
    }
    let l_p = length_penalty(sum_ref_len, sum_hyp_len, alpha);
    let raw = positives as f64 / n as f64;
    CdScore {
        s_cd: l_p * raw,
        l_p,
        raw_entail_rate: raw,
        n,
        positives,
        sum_ref_len,
        sum_hyp_len,
        alpha,
        degenerate: false,
    }
}

/// Memoizes verdicts by (premise, hypothesis) so sweeps that revisit the same
/// pairs hit the backend once.
pub struct CachedEntailer {
    inner: Arc<dyn Entailer>,
    cache: Mutex<HashMap<(String, String), EntailmentVerdict>>,
}

impl CachedEntailer {
    pub fn new(inner: Arc<dyn Entailer>) -> Self {
        CachedEntailer {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }
}

impl Entailer for CachedEntailer {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict> {
        let key = (premise.to_string(), hypothesis.to_string());
        if let Some(v) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(*v);
        }
        let v = self.inner.entails(premise, hypothesis)?;
        self.cache.lock().expect("cache poisoned").insert(key, v);
        Ok(v)
    }
}

fn count_positives(pairs: &[(String, String)], entailer: &dyn Entailer) -> Result<usize> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, (r, h))| {
            entailer
                .entails(r, h)
                .map(|v| usize::from(v.positive))
                .map_err(|e| Error::Job {
                    item: format!("pair {i}"),
                    source: Box::new(e),
                })
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Scores `(reference, hypothesis)` pairs.
pub fn score_call_drivers(
    pairs: &[(String, String)],
    entailer: &dyn Entailer,
    alpha: f64,
) -> Result<CdScore> {
    if pairs.is_empty() {
        return Err(Error::Validation("call-driver score needs at least one pair".into()));
    }
    let sum_ref: usize = pairs.iter().map(|(r, _)| word_count(r)).sum();
    let sum_hyp: usize = pairs.iter().map(|(_, h)| word_count(h)).sum();
    if sum_hyp == 0 {
        tracing::warn!(n = pairs.len(), "hypothesis corpus is empty; scoring as 0");
        return Ok(cd_score(0, pairs.len(), sum_ref, 0, alpha));
    }
    let positives = count_positives(pairs, entailer)?;
    Ok(cd_score(positives, pairs.len(), sum_ref, sum_hyp, alpha))
}

/// Positive-entailment rate with no length penalty.
pub fn score_without_penalty(pairs: &[(String, String)], entailer: &dyn Entailer) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("call-driver score needs at least one pair".into()));
    }
    Ok(count_positives(pairs, entailer)? as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub model: String,
    pub histogram: BTreeMap<usize, usize>,
    pub count: usize,
    /// `None` for an empty series.
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

pub fn length_distribution(model: &str, drivers: &[String]) -> LengthDistribution {
    let mut lengths: Vec<usize> = drivers.iter().map(|d| word_count(d)).collect();
    let mut histogram = BTreeMap::new();
    for &l in &lengths {
        *histogram.entry(l).or_insert(0) += 1;
    }
    lengths.sort_unstable();
    let count = lengths.len();
    let mean = (count > 0).then(|| lengths.iter().sum::<usize>() as f64 / count as f64);
    let median = (count > 0).then(|| {
        if count % 2 == 1 {
            lengths[count / 2] as f64
        } else {
            (lengths[count / 2 - 1] + lengths[count / 2]) as f64 / 2.0
        }
    });
    LengthDistribution {
        model: model.to_string(),
        histogram,
        count,
        mean,
        median,
    }
}

pub fn length_report(series: &[(String, Vec<String>)]) -> Vec<LengthDistribution> {
    series
        .iter()
        .map(|(model, drivers)| length_distribution(model, drivers))
        .collect()
}

/// Long-form `model,words,count` rows for plotting.
pub fn length_table(report: &[LengthDistribution]) -> String {
    let mut out = String::from("model,words,count\n");
    for d in report {
        for (words, count) in &d.histogram {
            let _ = writeln!(out, "{},{words},{count}", d.model);
        }
    }
    out
}

/// One row of a model-comparison report. Scores are fractions; formatting
/// multiplies by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct QualityRow {
    pub model: String,
    pub cd_without_penalty: Option<f64>,
    pub cd: Option<f64>,
    pub e2e: Option<f64>,
    pub dbcv_loss: Option<f64>,
}

pub fn format_quality_table(rows: &[QualityRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", x * 100.0));
    let mut out = String::from("Model | Call Driver w/o l_p ↑ | Call Driver ↑ | E2E ↑ | DBCV ↓\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{} | {} | {} | {} | {}",
            r.model,
            cell(r.cd_without_penalty),
            cell(r.cd),
            cell(r.e2e),
            r.dbcv_loss.map_or_else(|| "-".to_string(), |x| format!("{x:.2}")),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockEntailer;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn identical_pairs_score_one() {
        let p = pairs(&[("To request a loaner laptop.", "To request a loaner laptop."), ("Reset password", "Reset password")]);
        let s = score_call_drivers(&p, &MockEntailer, 1.0).unwrap();
        assert_eq!(s.l_p, 1.0);
        assert_eq!(s.s_cd, 1.0);
    }

    #[test]
    fn penalty_arithmetic() {
        let s = cd_score(4, 4, 10, 40, 1.0);
        assert_eq!(s.l_p, 0.5);
        assert_eq!(s.s_cd, 0.5);
        let s = cd_score(4, 4, 40, 10, 1.0);
        assert_eq!(s.l_p, 1.0);
        assert_eq!(s.s_cd, 1.0);
    }

    #[test]
    fn empty_hypothesis_corpus_is_degenerate_zero() {
        let p = pairs(&[("reset password", "")]);
        let s = score_call_drivers(&p, &MockEntailer, 1.0).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.s_cd, 0.0);
    }

    #[test]
    fn rate_without_penalty() {
        let p = pairs(&[("reset password", "reset password"), ("reset password", "refund parcel")]);
        assert_eq!(score_without_penalty(&p, &MockEntailer).unwrap(), 0.5);
        assert_eq!(score_without_penalty(&p[..1], &MockEntailer).unwrap(), 1.0);
    }

    struct Counting(AtomicUsize);
    impl Entailer for Counting {
        fn entails(&self, p: &str, h: &str) -> Result<EntailmentVerdict> {
            self.0.fetch_add(1, Ordering::SeqCst);
            MockEntailer.entails(p, h)
        }
    }

    #[test]
    fn cache_avoids_repeat_calls() {
        let inner = Arc::new(Counting(AtomicUsize::new(0)));
        let cached = CachedEntailer::new(inner.clone());
        let p = pairs(&[("a laptop", "a laptop"); 5]);
        score_call_drivers(&p, &cached, 1.0).unwrap();
        score_call_drivers(&p, &cached, 1.0).unwrap();
        assert!(inner.0.load(Ordering::SeqCst) <= 5);
        assert_eq!(cached.cached(), 1);
    }

    struct Failing;
    impl Entailer for Failing {
        fn entails(&self, _: &str, _: &str) -> Result<EntailmentVerdict> {
            Err(Error::Transport("down".into()))
        }
    }

    #[test]
    fn backend_failure_is_reported() {
        let p = pairs(&[("a b", "a b")]);
        let err = score_call_drivers(&p, &Failing, 1.0).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn length_distributions() {
        let d = length_distribution("m", &["one two three four five".into()]);
        assert_eq!(d.histogram, BTreeMap::from([(5, 1)]));
        assert_eq!(d.mean, Some(5.0));
        let empty = length_distribution("m", &[]);
        assert!(empty.histogram.is_empty());
        assert_eq!(empty.mean, None);
        assert_eq!(empty.median, None);
        let a = length_distribution("a", &["x y".into(), "x y z w".into()]);
        let b = length_distribution("b", &["x y q".into(), "x y z w q".into()]);
        assert_eq!(b.mean.unwrap() - a.mean.unwrap(), 1.0);
        assert_eq!(a.histogram.values().sum::<usize>(), a.count);
    }

    #[test]
    fn quality_table_scales_to_percent() {
        let t = format_quality_table(&[QualityRow {
            model: "ft".into(),
            cd: Some(0.8888),
            ..Default::default()
        }]);
        assert!(t.contains("ft | - | 88.88 | - | -"), "{t}");
    }
}
