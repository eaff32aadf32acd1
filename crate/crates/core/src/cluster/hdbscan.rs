//! HDBSCAN over a dense distance matrix.
//!
//! Steps: core distances, mutual-reachability minimum spanning tree (Prim,
//! O(n²)), single-linkage hierarchy, condensed tree under the minimum cluster
//! size, excess-of-mass selection.
//!
//! Spanning-tree edges of equal weight are merged as one level, so a cluster
//! that falls apart into three pieces at the same distance is a three-way
//! split. The result then depends only on which points are connected at each
//! distance, never on how ties inside the spanning tree were broken.

use std::collections::BTreeMap;

use super::{
    check_dims, distance_matrix, prim_mst, ClusterAssignment, ClusterParams, Edge, UnionFind,
};
use crate::error::Result;

/// Distances are floored here before inversion so duplicate points get a
/// finite lambda.
pub(crate) const MIN_DIST: f64 = 1e-10;

fn lambda(distance: f64) -> f64 {
    1.0 / distance.max(MIN_DIST)
}

struct Dendrogram {
    n_points: usize,
    /// Internal nodes; node `n_points + k` is `nodes[k]`.
    nodes: Vec<Merge>,
}

struct Merge {
    weight: f64,
    children: Vec<usize>,
    size: usize,
}

impl Dendrogram {
    fn size(&self, node: usize) -> usize {
        if node < self.n_points {
            1
        } else {
            self.nodes[node - self.n_points].size
        }
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n_points {
                out.push(x);
            } else {
                stack.extend(self.nodes[x - self.n_points].children.iter().copied());
            }
        }
    }

    fn root(&self) -> usize {
        self.n_points + self.nodes.len() - 1
    }
}

fn single_linkage(n: usize, mut mst: Vec<Edge>) -> Dendrogram {
    mst.sort_by(|x, y| x.cmp_key(y));
    let mut uf = UnionFind::new(n);
    let mut top: Vec<usize> = (0..n).collect();
    let mut nodes: Vec<Merge> = Vec::new();
    let mut i = 0;
    while i < mst.len() {
        let w = mst[i].weight;
        let mut j = i;
        while j < mst.len() && mst[j].weight == w {
            j += 1;
        }
        let mut old_roots = Vec::new();
        for e in &mst[i..j] {
            old_roots.push(uf.find(e.a));
            old_roots.push(uf.find(e.b));
        }
        old_roots.sort_unstable();
        old_roots.dedup();
        let old_tops: Vec<(usize, usize)> = old_roots.iter().map(|&r| (r, top[r])).collect();
        for e in &mst[i..j] {
            uf.union(e.a, e.b);
        }
        let mut merged: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (r, t) in old_tops {
            merged.entry(uf.find(r)).or_default().push(t);
        }
        for (new_root, mut children) in merged {
            children.sort_unstable();
            let size = children
                .iter()
                .map(|&c| if c < n { 1 } else { nodes[c - n].size })
                .sum::<usize>();
            nodes.push(Merge {
                weight: w,
                children,
                size,
            });
            top[new_root] = n + nodes.len() - 1;
        }
        i = j;
    }
    Dendrogram { n_points: n, nodes }
}

struct Condensed {
    parent: Option<usize>,
    birth: f64,
    children: Vec<usize>,
    stability: f64,
}

fn condense(tree: &Dendrogram, min_cluster_size: usize) -> (Vec<Condensed>, Vec<usize>) {
    let mut clusters = vec![Condensed {
        parent: None,
        birth: 0.0,
        children: Vec::new(),
        stability: 0.0,
    }];
    let mut home = vec![0usize; tree.n_points];
    let mut stack = vec![(0usize, tree.root())];
    while let Some((cid, mut node)) = stack.pop() {
        loop {
            let merge = &tree.nodes[node - tree.n_points];
            let lam = lambda(merge.weight);
            let birth = clusters[cid].birth;
            let (big, small): (Vec<usize>, Vec<usize>) = merge
                .children
                .iter()
                .partition(|&&c| tree.size(c) >= min_cluster_size);
            let mut fallen = Vec::new();
            for &c in &small {
                tree.leaves(c, &mut fallen);
            }
            for &p in &fallen {
                home[p] = cid;
            }
            clusters[cid].stability += (lam - birth) * fallen.len() as f64;
            match big.len() {
                0 => break,
                1 => node = big[0],
                _ => {
                    for &c in &big {
                        let child = clusters.len();
                        clusters.push(Condensed {
                            parent: Some(cid),
                            birth: lam,
                            children: Vec::new(),
                            stability: 0.0,
                        });
                        clusters[cid].children.push(child);
                        clusters[cid].stability += (lam - birth) * tree.size(c) as f64;
                        stack.push((child, c));
                    }
                    break;
                }
            }
        }
    }
    (clusters, home)
}

/// Excess-of-mass selection. The root is never selected.
fn select_clusters(clusters: &[Condensed]) -> Vec<bool> {
    let mut selected = vec![false; clusters.len()];
    let mut subtree = vec![0.0; clusters.len()];
    // Children are created after their parents, so descending ids visit
    // every cluster after all of its descendants.
    for cid in (1..clusters.len()).rev() {
        let child_sum: f64 = clusters[cid].children.iter().map(|&c| subtree[c]).sum();
        if child_sum > clusters[cid].stability {
            subtree[cid] = child_sum;
        } else {
            subtree[cid] = clusters[cid].stability;
            selected[cid] = true;
            let mut stack = clusters[cid].children.clone();
            while let Some(d) = stack.pop() {
                selected[d] = false;
                stack.extend(clusters[d].children.iter().copied());
            }
        }
    }
    selected
}

pub fn hdbscan<P: AsRef<[f64]>>(points: &[P], params: ClusterParams) -> Result<ClusterAssignment> {
    params.validate()?;
    check_dims(points)?;
    let n = points.len();
    if n < params.min_cluster_size {
        return Ok(ClusterAssignment {
            labels: vec![-1; n],
            params,
            stabilities: Vec::new(),
        });
    }

    let dist = distance_matrix(points);
    let k = params.min_samples.min(n);
    let core: Vec<f64> = (0..n)
        .map(|i| {
            // the point itself is its own first neighbor
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            row.sort_by(f64::total_cmp);
            row[k - 1]
        })
        .collect();
    let mutual_reach = |a: usize, b: usize| dist[a * n + b].max(core[a]).max(core[b]);

    let all: Vec<usize> = (0..n).collect();
    let tree = single_linkage(n, prim_mst(&all, mutual_reach));
    let (clusters, home) = condense(&tree, params.min_cluster_size);
    let selected = select_clusters(&clusters);

    let mut raw = vec![-1i64; n];
    for (p, label) in raw.iter_mut().enumerate() {
        let mut c = Some(home[p]);
        while let Some(cid) = c {
            if selected[cid] {
                *label = cid as i64;
                break;
            }
            c = clusters[cid].parent;
        }
    }

    // Dense ids in order of first member.
    let mut order: BTreeMap<i64, usize> = BTreeMap::new();
    let mut stabilities = Vec::new();
    let labels = raw
        .iter()
        .map(|&l| {
            if l < 0 {
                return -1;
            }
            let next = order.len();
            let id = *order.entry(l).or_insert_with(|| {
                stabilities.push(clusters[l as usize].stability);
                next
            });
            id as i64
        })
        .collect();

    Ok(ClusterAssignment {
        labels,
        params,
        stabilities,
    })
}
