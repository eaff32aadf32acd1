//! Independent brute-force references used by the integration and acceptance
//! tests. Nothing here calls into the library's algorithm code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

/// Distances below this are treated as this value when turned into lambda.
pub const MIN_DIST: f64 = 1e-10;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn core_distances(points: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let mut ds: Vec<f64> = (0..n).map(|j| dist(&points[i], &points[j])).collect();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ds[min_samples.min(n) - 1]
        })
        .collect()
}

/// Connected components of `set` using only edges with weight strictly below
/// `threshold`, found by repeated flood fill over the full graph.
fn components(set: &[usize], weight: &dyn Fn(usize, usize) -> f64, threshold: f64) -> Vec<Vec<usize>> {
    let mut unvisited: BTreeSet<usize> = set.iter().copied().collect();
    let mut out = Vec::new();
    while let Some(&start) = unvisited.iter().next() {
        unvisited.remove(&start);
        let mut comp = vec![start];
        let mut frontier = vec![start];
        while let Some(a) = frontier.pop() {
            let next: Vec<usize> = unvisited
                .iter()
                .copied()
                .filter(|&b| weight(a, b) < threshold)
                .collect();
            for b in next {
                unvisited.remove(&b);
                comp.push(b);
                frontier.push(b);
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// Smallest edge weight at which `set` becomes connected, by trying every
/// candidate weight in ascending order.
fn connect_threshold(set: &[usize], weight: &dyn Fn(usize, usize) -> f64) -> f64 {
    let mut candidates: Vec<f64> = Vec::new();
    for (k, &a) in set.iter().enumerate() {
        for &b in &set[k + 1..] {
            candidates.push(weight(a, b));
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    for w in candidates {
        // connected using edges <= w  <=>  one component below the next float up
        if components(set, weight, next_up(w)).len() == 1 {
            return w;
        }
    }
    unreachable!("complete graph is always connected")
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

fn lambda(w: f64) -> f64 {
    1.0 / w.max(MIN_DIST)
}

struct OracleCluster {
    parent: Option<usize>,
    birth: f64,
    /// (lambda, size) of everything leaving this cluster: points and children.
    departures: Vec<(f64, usize)>,
    children: Vec<usize>,
}

/// Brute-force HDBSCAN with excess-of-mass selection. Returns labels with
/// clusters numbered by their smallest member index, -1 for noise.
pub fn hdbscan_reference(points: &[Vec<f64>], min_cluster_size: usize, min_samples: usize) -> Vec<i64> {
    let n = points.len();
    if n < min_cluster_size || n == 0 {
        return vec![-1; n];
    }
    let core = core_distances(points, min_samples);
    let weight = |a: usize, b: usize| -> f64 {
        dist(&points[a], &points[b]).max(core[a]).max(core[b])
    };

    let mut clusters = vec![OracleCluster {
        parent: None,
        birth: 0.0,
        departures: vec![],
        children: vec![],
    }];
    // cluster each point last belonged to
    let mut home = vec![0usize; n];
    let mut work: Vec<(usize, Vec<usize>)> = vec![(0, (0..n).collect())];
    while let Some((cid, mut set)) = work.pop() {
        loop {
            if set.len() == 1 {
                // cannot happen for a live cluster of size >= min_cluster_size >= 2
                unreachable!();
            }
            let w = connect_threshold(&set, &weight);
            let lam = lambda(w);
            let parts = components(&set, &weight, w);
            let big: Vec<&Vec<usize>> = parts.iter().filter(|p| p.len() >= min_cluster_size).collect();
            for p in parts.iter().filter(|p| p.len() < min_cluster_size) {
                for &pt in p.iter() {
                    home[pt] = cid;
                    clusters[cid].departures.push((lam, 1));
                }
            }
            match big.len() {
                0 => break,
                1 => {
                    set = big[0].clone();
                }
                _ => {
                    for p in big {
                        let child = clusters.len();
                        clusters.push(OracleCluster {
                            parent: Some(cid),
                            birth: lam,
                            departures: vec![],
                            children: vec![],
                        });
                        clusters[cid].children.push(child);
                        clusters[cid].departures.push((lam, p.len()));
                        work.push((child, p.clone()));
                    }
                    break;
                }
            }
        }
    }

    let stability: Vec<f64> = clusters
        .iter()
        .map(|c| c.departures.iter().map(|(l, s)| (l - c.birth) * *s as f64).sum())
        .collect();

    // Excess of mass, deepest clusters first. Children always have larger
    // ids than their parent.
    let mut best = stability.clone();
    let mut selected = vec![false; clusters.len()];
    for cid in (1..clusters.len()).rev() {
        let child_sum: f64 = clusters[cid].children.iter().map(|&c| best[c]).sum();
        if child_sum > stability[cid] {
            best[cid] = child_sum;
        } else {
            selected[cid] = true;
            let mut stack = clusters[cid].children.clone();
            while let Some(d) = stack.pop() {
                selected[d] = false;
                stack.extend(clusters[d].children.iter().copied());
            }
        }
    }

    let mut raw = vec![-1i64; n];
    for p in 0..n {
        let mut c = Some(home[p]);
        while let Some(cid) = c {
            if selected[cid] {
                raw[p] = cid as i64;
                break;
            }
            c = clusters[cid].parent;
        }
    }
    canonicalize(&raw)
}

/// Renumbers cluster ids by first-member index.
pub fn canonicalize(labels: &[i64]) -> Vec<i64> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

/// Direct-formula DBCV with plain powers and Kruskal spanning trees.
pub fn dbcv_reference(points: &[Vec<f64>], labels: &[i64]) -> f64 {
    let n_total = points.len();
    let dim = points[0].len() as f64;
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            groups.entry(l).or_default().push(i);
        }
    }
    let clusters: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    if clusters.is_empty() {
        return -1.0;
    }

    let mut apts = vec![0.0; n_total];
    for c in &clusters {
        for &p in c {
            let s: f64 = c
                .iter()
                .filter(|&&q| q != p)
                .map(|&q| (1.0 / dist(&points[p], &points[q]).max(1e-12)).powf(dim))
                .sum();
            apts[p] = (s / (c.len() - 1) as f64).powf(-1.0 / dim);
        }
    }
    let mreach = |a: usize, b: usize| dist(&points[a], &points[b]).max(apts[a]).max(apts[b]);

    let mut sparseness = Vec::new();
    let mut internal = Vec::new();
    for c in &clusters {
        // Kruskal over (weight, lo, hi)
        let mut edges = Vec::new();
        for (k, &a) in c.iter().enumerate() {
            for &b in &c[k + 1..] {
                edges.push((mreach(a, b), a.min(b), a.max(b)));
            }
        }
        edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut root: BTreeMap<usize, usize> = c.iter().map(|&p| (p, p)).collect();
        fn find(root: &mut BTreeMap<usize, usize>, x: usize) -> usize {
            let mut r = x;
            while root[&r] != r {
                r = root[&r];
            }
            r
        }
        let mut tree = Vec::new();
        for (w, a, b) in edges {
            let (ra, rb) = (find(&mut root, a), find(&mut root, b));
            if ra != rb {
                root.insert(ra, rb);
                tree.push((w, a, b));
            }
        }
        let mut degree: BTreeMap<usize, usize> = BTreeMap::new();
        for &(_, a, b) in &tree {
            *degree.entry(a).or_default() += 1;
            *degree.entry(b).or_default() += 1;
        }
        let mut nodes: Vec<usize> = c.iter().copied().filter(|p| degree.get(p).copied().unwrap_or(0) > 1).collect();
        if nodes.is_empty() {
            nodes = c.clone();
        }
        let inner: Vec<f64> = tree
            .iter()
            .filter(|(_, a, b)| nodes.contains(a) && nodes.contains(b))
            .map(|(w, _, _)| *w)
            .collect();
        let edges_used: Vec<f64> = if inner.is_empty() {
            tree.iter().map(|(w, _, _)| *w).collect()
        } else {
            inner
        };
        sparseness.push(edges_used.iter().cloned().fold(f64::MIN, f64::max));
        internal.push(nodes);
    }

    let mut total = 0.0;
    for i in 0..clusters.len() {
        let mut sep = f64::INFINITY;
        for j in 0..clusters.len() {
            if i == j {
                continue;
            }
            for &a in &internal[i] {
                for &b in &internal[j] {
                    sep = sep.min(mreach(a, b));
                }
            }
        }
        let v = if sep.is_infinite() {
            0.0
        } else {
            let m = sep.max(sparseness[i]);
            if m == 0.0 {
                0.0
            } else {
                (sep - sparseness[i]) / m
            }
        };
        total += clusters[i].len() as f64 / n_total as f64 * v;
    }
    total
}
