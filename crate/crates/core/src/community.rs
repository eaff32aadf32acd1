//! Threshold-based greedy community detection over cosine similarity, plus
//! medoid selection.

use crate::gateway::dot;

/// Cosine similarity matrix of L2-normalized vectors.
pub fn similarity_matrix<V: AsRef<[f64]>>(vectors: &[V]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut sims = vec![vec![0.0; n]; n];
    for i in 0..n {
        sims[i][i] = dot(vectors[i].as_ref(), vectors[i].as_ref());
        for j in i + 1..n {
            let s = dot(vectors[i].as_ref(), vectors[j].as_ref());
            sims[i][j] = s;
            sims[j][i] = s;
        }
    }
    sims
}

/// Greedy communities.
///
/// Every point proposes itself as a seed whose neighborhood is all points with
/// similarity >= `threshold`. Proposals are visited largest first (ties to the
/// smaller seed index). A proposal is accepted when its seed is still free and
/// at least `min_size` of its neighbors are free; accepted members are taken.
/// Points already marked in `taken` never move. Points left free are for the
/// caller to treat as singletons.
pub fn greedy_communities(
    sims: &[Vec<f64>],
    threshold: f64,
    min_size: usize,
    taken: &mut [bool],
) -> Vec<Vec<usize>> {
    let n = sims.len();
    let mut proposals: Vec<(usize, Vec<usize>)> = (0..n)
        .map(|i| (i, (0..n).filter(|&j| j == i || sims[i][j] >= threshold).collect()))
        .collect();
    proposals.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut out = Vec::new();
    for (seed, neighbors) in proposals {
        if taken[seed] {
            continue;
        }
        let free: Vec<usize> = neighbors.into_iter().filter(|&j| !taken[j]).collect();
        if free.len() >= min_size.max(1) {
            for &j in &free {
                taken[j] = true;
            }
            out.push(free);
        }
    }
    out
}

/// Member with the largest summed similarity to the other members; ties go
/// to the earliest member.
pub fn medoid(members: &[usize], sims: &[Vec<f64>]) -> usize {
    let mut best = members[0];
    let mut best_score = f64::NEG_INFINITY;
    for &i in members {
        let score: f64 = members.iter().filter(|&&j| j != i).map(|&j| sims[i][j]).sum();
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}
