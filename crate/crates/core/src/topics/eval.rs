//! Topic coherence: weighted mix of label/member embedding similarity and
//! label-to-member entailment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TopicModel;
use crate::error::{Error, Result};
use crate::gateway::{cosine, Gateway};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2eWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for E2eWeights {
    fn default() -> Self {
        E2eWeights { alpha: 1.0, beta: 1.0 }
    }
}

impl E2eWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::Config("e2e weights must be >= 0 with a positive sum".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCoherence {
    pub cluster_id: usize,
    pub size: usize,
    /// Mean cosine with negatives floored at 0.
    pub sim: f64,
    pub raw_sim: f64,
    pub ent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eScore {
    pub s_sim: f64,
    pub s_ent: f64,
    pub s_e2e: f64,
    /// S_sim without the 0 floor.
    pub raw_s_sim: f64,
    pub weights: E2eWeights,
    pub per_cluster: Vec<ClusterCoherence>,
}

/// Order-independent mean: values are summed in sorted order.
fn mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Aggregates per-cluster `(sim, ent)` means into `(S_sim, S_ent, S_e2e)`.
pub fn e2e_from_parts(parts: &[(f64, f64)], w: E2eWeights) -> (f64, f64, f64) {
    let s_sim = mean(parts.iter().map(|p| p.0).collect());
    let s_ent = mean(parts.iter().map(|p| p.1).collect());
    (s_sim, s_ent, (w.alpha * s_sim + w.beta * s_ent) / (w.alpha + w.beta))
}

fn coherence(model: &TopicModel, idx: usize, gw: &Gateway) -> Result<ClusterCoherence> {
    let c = &model.clusters[idx];
    let members = model.member_texts(c);
    let mut inputs = Vec::with_capacity(members.len() + 1);
    inputs.push(c.label.clone());
    inputs.extend(members.iter().cloned());
    let vecs = gw.embed(&inputs)?;
    let raw: Vec<f64> = vecs[1..].iter().map(|v| cosine(&vecs[0].values, &v.values)).collect();
    let positives = members
        .par_iter()
        .map(|m| gw.entails(&c.label, m).map(|v| usize::from(v.positive)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(ClusterCoherence {
        cluster_id: c.id,
        size: members.len(),
        sim: mean(raw.iter().map(|s| s.max(0.0)).collect()),
        raw_sim: mean(raw),
        ent: positives as f64 / members.len() as f64,
    })
}

/// Scores every topic cluster; the outlier pool is not part of the score.
pub fn e2e_score(model: &TopicModel, gw: &Gateway, w: E2eWeights) -> Result<E2eScore> {
    w.validate()?;
    if model.clusters.is_empty() {
        return Err(Error::Validation("model has no topic clusters to score".into()));
    }
    if let Some(c) = model.clusters.iter().find(|c| !c.is_labeled()) {
        return Err(Error::Unlabeled(c.id));
    }
    let per_cluster = (0..model.clusters.len())
        .into_par_iter()
        .map(|i| {
            coherence(model, i, gw).map_err(|e| Error::Job {
                item: format!("cluster {}", model.clusters[i].id),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<(f64, f64)> = per_cluster.iter().map(|c| (c.sim, c.ent)).collect();
    let (s_sim, s_ent, s_e2e) = e2e_from_parts(&parts, w);
    Ok(E2eScore {
        s_sim,
        s_ent,
        s_e2e,
        raw_s_sim: mean(per_cluster.iter().map(|c| c.raw_sim).collect()),
        weights: w,
        per_cluster,
    })
}
