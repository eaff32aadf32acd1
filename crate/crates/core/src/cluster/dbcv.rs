//! Density-Based Clustering Validation (Moulavi et al., 2014).
//!
//! The all-points core distance raises inverse distances to the power of the
//! embedding dimension, which overflows f64 for sentence embeddings, so it is
//! evaluated with log-sum-exp.

use std::collections::BTreeMap;

use super::{check_dims, distance_matrix, prim_mst, ClusterAssignment, ValidityScore};
use crate::error::Result;

const APTS_MIN_DIST: f64 = 1e-12;

struct ClusterShape {
    size: usize,
    sparseness: f64,
    internal: Vec<usize>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// All-points core distance of every member of `members`:
/// `(mean over other members of (1/d)^dim)^(-1/dim)`.
fn all_points_core(members: &[usize], dist: &[f64], n: usize, dim: f64) -> Vec<f64> {
    let denom = ((members.len() - 1) as f64).ln();
    members
        .iter()
        .map(|&p| {
            let terms: Vec<f64> = members
                .iter()
                .filter(|&&q| q != p)
                .map(|&q| -dim * dist[p * n + q].max(APTS_MIN_DIST).ln())
                .collect();
            (-(log_sum_exp(&terms) - denom) / dim).exp()
        })
        .collect()
}

pub fn dbcv<P: AsRef<[f64]>>(points: &[P], assignment: &ClusterAssignment) -> Result<ValidityScore> {
    let dim = check_dims(points)? as f64;
    let n = points.len();
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in assignment.labels.iter().enumerate().take(n) {
        if l >= 0 {
            groups.entry(l).or_default().push(i);
        }
    }
    let clusters: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    if clusters.is_empty() {
        return Ok(ValidityScore::worst());
    }

    let dist = distance_matrix(points);
    let mut apts = vec![0.0; n];
    for members in &clusters {
        for (&p, core) in members
            .iter()
            .zip(all_points_core(members, &dist, n, dim))
        {
            apts[p] = core;
        }
    }
    let mreach = |a: usize, b: usize| dist[a * n + b].max(apts[a]).max(apts[b]);

    let shapes: Vec<ClusterShape> = clusters
        .iter()
        .map(|members| {
            let tree = prim_mst(members, mreach);
            let mut degree: BTreeMap<usize, usize> = BTreeMap::new();
            for e in &tree {
                *degree.entry(e.a).or_default() += 1;
                *degree.entry(e.b).or_default() += 1;
            }
            let mut internal: Vec<usize> = members
                .iter()
                .copied()
                .filter(|p| degree.get(p).copied().unwrap_or(0) > 1)
                .collect();
            if internal.is_empty() {
                internal = members.clone();
            }
            let is_internal = |p: usize| internal.binary_search(&p).is_ok();
            let inner_max = tree
                .iter()
                .filter(|e| is_internal(e.a) && is_internal(e.b))
                .map(|e| e.weight)
                .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w))));
            let sparseness = inner_max.unwrap_or_else(|| {
                tree.iter().map(|e| e.weight).fold(f64::MIN, f64::max)
            });
            ClusterShape {
                size: members.len(),
                sparseness,
                internal,
            }
        })
        .collect();

    let mut total = 0.0;
    for (i, ci) in shapes.iter().enumerate() {
        let separation = shapes
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, cj)| {
                ci.internal
                    .iter()
                    .flat_map(move |&a| cj.internal.iter().map(move |&b| (a, b)))
            })
            .map(|(a, b)| mreach(a, b))
            .fold(f64::INFINITY, f64::min);
        // With a single cluster there is nothing to separate from.
        let validity = if separation.is_infinite() {
            0.0
        } else {
            let denom = separation.max(ci.sparseness);
            if denom == 0.0 {
                0.0
            } else {
                (separation - ci.sparseness) / denom
            }
        };
        total += ci.size as f64 / n as f64 * validity;
    }
    Ok(ValidityScore::from_dbcv(total.clamp(-1.0, 1.0)))
}
