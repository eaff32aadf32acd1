//! FAQ candidates per topic: trace drivers back to the caller utterances they
//! came from, sample those, ask the model for the questions being asked, and
//! collapse near-duplicate questions to their medoid.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::{greedy_communities, medoid, similarity_matrix};
use crate::driver_gen::ItemError;
use crate::error::{Error, Result};
use crate::gateway::{CompletionRequest, Gateway};
use crate::text::normalize;
use crate::topics::{TopicCluster, TopicModel};
use crate::transcript::{Speaker, Transcript};

pub const UTTERANCE_SLOT: &str = "{utterances}";

pub const DEFAULT_FAQ_PROMPT: &str = "[INST] Below are things customers said on support calls. List the distinct questions being asked, one per line, phrased generally.\n\n{utterances} [/INST]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityBase {
    /// Overlap divided by the utterance's token set size.
    #[default]
    Utterance,
    /// Overlap divided by the driver's token set size.
    Driver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaqConfig {
    pub density_floor: f64,
    pub density_base: DensityBase,
    pub sample_min: usize,
    pub sample_max: usize,
    pub dedup_threshold: f64,
    pub prompt_template: String,
    pub max_tokens: u32,
}

impl Default for FaqConfig {
    fn default() -> Self {
        FaqConfig {
            density_floor: 0.2,
            density_base: DensityBase::Utterance,
            sample_min: 5,
            sample_max: 20,
            dedup_threshold: 0.85,
            prompt_template: DEFAULT_FAQ_PROMPT.into(),
            max_tokens: 512,
        }
    }
}

impl FaqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.density_floor) {
            return Err(Error::Config("density_floor must be in [0, 1]".into()));
        }
        if self.sample_min < 1 || self.sample_min > self.sample_max {
            return Err(Error::Config("need 1 <= sample_min <= sample_max".into()));
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return Err(Error::Config("dedup_threshold must be in (0, 1]".into()));
        }
        if self.prompt_template.matches(UTTERANCE_SLOT).count() != 1 {
            return Err(Error::Config(format!("faq prompt needs exactly one {UTTERANCE_SLOT}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMatch {
    pub transcript_id: String,
    pub utterance_index: usize,
    pub density: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaqCandidate {
    pub cluster_id: usize,
    pub question: String,
    pub support: Vec<UtteranceMatch>,
    pub dedup_group: usize,
}

fn token_set(text: &str) -> BTreeSet<String> {
    normalize(text).tokens.into_iter().collect()
}

pub fn density(driver: &BTreeSet<String>, utterance: &BTreeSet<String>, base: DensityBase) -> f64 {
    let denom = match base {
        DensityBase::Utterance => utterance.len(),
        DensityBase::Driver => driver.len(),
    };
    if denom == 0 {
        return 0.0;
    }
    driver.intersection(utterance).count() as f64 / denom as f64
}

/// Best-matching caller utterances for each driver of the cluster. Equal best
/// scores are all kept; scores below `floor` are dropped.
pub fn trace_utterances(
    model: &TopicModel,
    cluster: &TopicCluster,
    transcripts: &HashMap<String, &Transcript>,
    cfg: &FaqConfig,
) -> Vec<UtteranceMatch> {
    let mut out = Vec::new();
    for id in &cluster.member_driver_ids {
        let Some(t) = transcripts.get(id) else {
            tracing::warn!(driver = %id, "source transcript missing; driver skipped");
            continue;
        };
        let driver = token_set(model.drivers.get(id).map_or("", String::as_str));
        out.extend(trace_driver(&driver, t, cfg));
    }
    out
}

pub fn trace_driver(driver: &BTreeSet<String>, t: &Transcript, cfg: &FaqConfig) -> Vec<UtteranceMatch> {
    let scored: Vec<(usize, f64, &str)> = t
        .utterances
        .iter()
        .filter(|u| u.speaker == Speaker::Caller)
        .map(|u| (u.index, density(driver, &token_set(&u.text), cfg.density_base), u.text.as_str()))
        .collect();
    let best = scored.iter().map(|s| s.1).fold(0.0, f64::max);
    if best <= 0.0 || best < cfg.density_floor {
        return Vec::new();
    }
    scored
        .into_iter()
        .filter(|s| s.1 == best)
        .map(|(index, density, text)| UtteranceMatch {
            transcript_id: t.id.clone(),
            utterance_index: index,
            density,
            text: text.to_string(),
        })
        .collect()
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    line
}

/// Samples between `sample_min` and `sample_max` matched utterances (fewer if
/// there are fewer) and asks the backbone model for the questions in them.
pub fn generate_faq(
    cluster_id: usize,
    matches: &[UtteranceMatch],
    gw: &Gateway,
    cfg: &FaqConfig,
    seed: u64,
) -> Result<Vec<FaqCandidate>> {
    cfg.validate()?;
    if matches.is_empty() {
        return Err(Error::Validation(format!("cluster {cluster_id}: no traced utterances")));
    }
    // one entry per utterance even if several drivers traced to it
    let mut unique: BTreeMap<(String, usize), &UtteranceMatch> = BTreeMap::new();
    for m in matches {
        unique
            .entry((m.transcript_id.clone(), m.utterance_index))
            .and_modify(|e| {
                if m.density > e.density {
                    *e = m;
                }
            })
            .or_insert(m);
    }
    let pool: Vec<&UtteranceMatch> = unique.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (cluster_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let want = rng.gen_range(cfg.sample_min..=cfg.sample_max);
    let mut picked = rand::seq::index::sample(&mut rng, pool.len(), want.min(pool.len())).into_vec();
    picked.sort_unstable();
    let sample: Vec<&UtteranceMatch> = picked.into_iter().map(|i| pool[i]).collect();

    let bullets: Vec<String> = sample.iter().map(|m| format!("- {}", m.text.trim())).collect();
    let mut req = CompletionRequest::new(cfg.prompt_template.replacen(UTTERANCE_SLOT, &bullets.join("\n"), 1));
    req.max_tokens = cfg.max_tokens;
    let reply = gw.complete(&req)?;

    let mut out = Vec::new();
    for line in reply.text.lines() {
        let q = strip_list_marker(line);
        if q.is_empty() {
            continue;
        }
        if !q.ends_with('?') {
            tracing::warn!(cluster = cluster_id, line = %q, "dropping non-question line");
            continue;
        }
        let qt = token_set(q);
        let mut support: Vec<UtteranceMatch> = sample
            .iter()
            .filter(|m| !token_set(&m.text).is_disjoint(&qt))
            .map(|m| (*m).clone())
            .collect();
        if support.is_empty() {
            support = sample.iter().map(|m| (*m).clone()).collect();
        }
        out.push(FaqCandidate {
            cluster_id,
            question: q.to_string(),
            support,
            dedup_group: out.len(),
        });
    }
    Ok(out)
}

/// Collapses near-duplicates within each cluster to the community medoid.
/// Representatives keep the support of every question they stand for.
pub fn dedup_questions(candidates: &[FaqCandidate], gw: &Gateway, threshold: f64) -> Result<Vec<FaqCandidate>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = candidates.iter().map(|c| c.question.clone()).collect();
    let vecs: Vec<Vec<f64>> = gw.embed(&texts)?.into_iter().map(|e| e.values).collect();
    let mut by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        by_cluster.entry(c.cluster_id).or_default().push(i);
    }
    let mut out = Vec::new();
    for idx in by_cluster.into_values() {
        let local: Vec<&Vec<f64>> = idx.iter().map(|&i| &vecs[i]).collect();
        let sims = similarity_matrix(&local);
        let mut taken = vec![false; idx.len()];
        let mut groups = greedy_communities(&sims, threshold, 2, &mut taken);
        groups.extend((0..idx.len()).filter(|&i| !taken[i]).map(|i| vec![i]));
        let mut reps: Vec<(usize, Vec<usize>)> = groups.into_iter().map(|g| (medoid(&g, &sims), g)).collect();
        reps.sort_by_key(|r| r.0);
        for (group, (rep, members)) in reps.into_iter().enumerate() {
            let mut c = candidates[idx[rep]].clone();
            c.dedup_group = group;
            for &m in &members {
                for s in &candidates[idx[m]].support {
                    if !c.support.iter().any(|x| x.transcript_id == s.transcript_id && x.utterance_index == s.utterance_index) {
                        c.support.push(s.clone());
                    }
                }
            }
            out.push(c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaqRun {
    pub faqs: Vec<FaqCandidate>,
    pub errors: Vec<ItemError>,
}

/// Runs tracing and generation for every cluster in parallel, then dedup.
pub fn faq_for_model(
    model: &TopicModel,
    transcripts: &[Transcript],
    gw: &Gateway,
    cfg: &FaqConfig,
    seed: u64,
) -> Result<FaqRun> {
    cfg.validate()?;
    let by_id: HashMap<String, &Transcript> = transcripts.iter().map(|t| (t.id.clone(), t)).collect();
    let results: Vec<Result<Vec<FaqCandidate>>> = model
        .clusters
        .par_iter()
        .map(|c| {
            let matches = trace_utterances(model, c, &by_id, cfg);
            generate_faq(c.id, &matches, gw, cfg, seed)
        })
        .collect();
    let mut run = FaqRun::default();
    let mut all = Vec::new();
    for (index, (c, r)) in model.clusters.iter().zip(results).enumerate() {
        match r {
            Ok(v) => all.extend(v),
            Err(e) => run.errors.push(ItemError {
                item: format!("cluster {}", c.id),
                index,
                error: e.to_string(),
            }),
        }
    }
    run.faqs = dedup_questions(&all, gw, cfg.dedup_threshold)?;
    Ok(run)
}
