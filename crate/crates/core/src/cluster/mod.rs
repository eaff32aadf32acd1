//! Density-based clustering of driver embeddings: HDBSCAN, the DBCV validity
//! index, and a grid search over HDBSCAN hyperparameters scored by DBCV.

mod dbcv;
mod grid;
mod hdbscan;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dbcv::dbcv;
pub use grid::{default_grid, grid_search, parse_grid, GridResult};
pub use hdbscan::hdbscan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Euclidean distance between L2-normalized vectors, a monotone function
    /// of cosine distance.
    #[default]
    EuclideanOnNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    #[serde(default)]
    pub metric: Metric,
}

impl ClusterParams {
    pub fn new(min_cluster_size: usize, min_samples: usize) -> Self {
        ClusterParams {
            min_cluster_size,
            min_samples,
            metric: Metric::EuclideanOnNormalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 {
            return Err(Error::Validation("min_cluster_size must be >= 2".into()));
        }
        if self.min_samples < 1 || self.min_samples > self.min_cluster_size {
            return Err(Error::Validation(
                "min_samples must be in 1..=min_cluster_size".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Per point: -1 for noise, otherwise a dense cluster id. Ids are ordered
    /// by each cluster's smallest member index.
    pub labels: Vec<i64>,
    pub params: ClusterParams,
    /// Excess-of-mass stability of each selected cluster, indexed by id.
    pub stabilities: Vec<f64>,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.stabilities.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster as i64)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn noise(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l < 0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityScore {
    /// Standard DBCV in [-1, 1], higher is better.
    pub dbcv: f64,
    /// `(1 - dbcv) / 2` in [0, 1], lower is better.
    pub loss: f64,
}

impl ValidityScore {
    pub fn from_dbcv(dbcv: f64) -> Self {
        ValidityScore {
            dbcv,
            loss: (1.0 - dbcv) / 2.0,
        }
    }

    pub fn worst() -> Self {
        Self::from_dbcv(-1.0)
    }
}

pub(crate) fn check_dims<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let dim = points.first().map(|p| p.as_ref().len()).unwrap_or(0);
    for p in points {
        if p.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.as_ref().len(),
            });
        }
    }
    Ok(dim)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Full pairwise distance matrix, row-major.
pub(crate) fn distance_matrix<P: AsRef<[f64]>>(points: &[P]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = euclidean(points[i].as_ref(), points[j].as_ref());
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Edge {
    pub weight: f64,
    pub a: usize,
    pub b: usize,
}

impl Edge {
    fn new(weight: f64, x: usize, y: usize) -> Self {
        Edge {
            weight,
            a: x.min(y),
            b: x.max(y),
        }
    }

    /// Strict total order: weight, then endpoint indices.
    pub fn cmp_key(&self, other: &Edge) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

/// Prim's algorithm over the complete graph on `nodes` with edge weights from
/// `weight`. Edges compare by (weight, smaller index, larger index), a strict
/// total order, so the tree is the unique minimum under that order.
pub(crate) fn prim_mst(nodes: &[usize], weight: impl Fn(usize, usize) -> f64) -> Vec<Edge> {
    let m = nodes.len();
    if m < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; m];
    let mut best: Vec<Option<Edge>> = vec![None; m];
    let mut edges = Vec::with_capacity(m - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..m {
        for k in 0..m {
            if in_tree[k] {
                continue;
            }
            let cand = Edge::new(weight(nodes[current], nodes[k]), nodes[current], nodes[k]);
            if best[k].is_none_or(|b| cand.cmp_key(&b) == Ordering::Less) {
                best[k] = Some(cand);
            }
        }
        let next = (0..m)
            .filter(|&k| !in_tree[k])
            .min_by(|&x, &y| best[x].unwrap().cmp_key(&best[y].unwrap()))
            .expect("a node remains outside the tree");
        in_tree[next] = true;
        edges.push(best[next].unwrap());
        current = next;
    }
    edges
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
        rb
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(ClusterParams::new(5, 1).validate().is_ok());
        assert!(ClusterParams::new(1, 1).validate().is_err());
        assert!(ClusterParams::new(5, 6).validate().is_err());
        assert!(ClusterParams::new(5, 0).validate().is_err());
    }

    #[test]
    fn loss_is_exact_transform() {
        for d in [-1.0, -0.3, 0.0, 0.42, 1.0] {
            let s = ValidityScore::from_dbcv(d);
            assert_eq!(s.loss, (1.0 - d) / 2.0);
        }
        assert_eq!(ValidityScore::worst().loss, 1.0);
    }

    #[test]
    fn prim_matches_total_order_kruskal_on_ties() {
        // Square with unit sides and equal diagonals: many tied trees exist.
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let nodes: Vec<usize> = (0..4).collect();
        let w = |a: usize, b: usize| euclidean(&pts[a], &pts[b]);
        let mut tree = prim_mst(&nodes, w);
        tree.sort_by(|x, y| x.cmp_key(y));
        let got: Vec<(usize, usize)> = tree.iter().map(|e| (e.a, e.b)).collect();
        // Kruskal by (w, a, b): (0,1), (0,3), (1,2)
        assert_eq!(got, vec![(0, 1), (0, 3), (1, 2)]);
    }
}
