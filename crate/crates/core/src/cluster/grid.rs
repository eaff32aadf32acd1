use rayon::prelude::*;

use super::{dbcv, hdbscan, ClusterAssignment, ClusterParams, ValidityScore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub params: ClusterParams,
    pub assignment: ClusterAssignment,
    pub score: ValidityScore,
    /// Loss of every evaluated cell, in grid order.
    pub evaluated: Vec<(ClusterParams, ValidityScore)>,
}

/// min_cluster_size in {5, 10, 15, 25, 50} x min_samples in {1, 5, 10, 15},
/// keeping min_samples <= min_cluster_size.
pub fn default_grid() -> Vec<ClusterParams> {
    product(&[5, 10, 15, 25, 50], &[1, 5, 10, 15])
}

fn product(sizes: &[usize], samples: &[usize]) -> Vec<ClusterParams> {
    sizes
        .iter()
        .flat_map(|&m| {
            samples
                .iter()
                .filter(move |&&s| s <= m)
                .map(move |&s| ClusterParams::new(m, s))
        })
        .collect()
}

/// Parses "sizes;samples" comma lists, e.g. `5,10,25;1,5`.
pub fn parse_grid(spec: &str) -> Result<Vec<ClusterParams>> {
    let (sizes, samples) = spec
        .split_once(';')
        .ok_or_else(|| Error::Config(format!("grid {spec:?}: expected <sizes>;<samples>")))?;
    let parse = |s: &str| -> Result<Vec<usize>> {
        s.split(',')
            .map(|x| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("grid value {x:?}: {e}")))
            })
            .collect()
    };
    let grid = product(&parse(sizes)?, &parse(samples)?);
    if grid.is_empty() {
        return Err(Error::Config(format!("grid {spec:?} has no valid cells")));
    }
    for p in &grid {
        p.validate()?;
    }
    Ok(grid)
}

/// Evaluates every grid cell and returns the one with the lowest DBCV loss.
/// Ties go to the smaller min_cluster_size, then the smaller min_samples.
pub fn grid_search<P: AsRef<[f64]> + Sync>(
    points: &[P],
    grid: &[ClusterParams],
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Validation("grid search needs at least one cell".into()));
    }
    let cells: Vec<(ClusterParams, ClusterAssignment, ValidityScore)> = grid
        .par_iter()
        .map(|&p| {
            let a = hdbscan(points, p)?;
            let s = dbcv(points, &a)?;
            Ok((p, a, s))
        })
        .collect::<Result<_>>()?;
    let evaluated: Vec<(ClusterParams, ValidityScore)> =
        cells.iter().map(|(p, _, s)| (*p, *s)).collect();
    let best = best_cell(&evaluated);
    let (params, assignment, score) = cells.into_iter().nth(best).expect("grid is non-empty");
    Ok(GridResult {
        params,
        assignment,
        score,
        evaluated,
    })
}

fn best_cell(cells: &[(ClusterParams, ValidityScore)]) -> usize {
    (0..cells.len())
        .min_by(|&i, &j| {
            let (x, y) = (&cells[i], &cells[j]);
            x.1.loss
                .total_cmp(&y.1.loss)
                .then(x.0.min_cluster_size.cmp(&y.0.min_cluster_size))
                .then(x.0.min_samples.cmp(&y.0.min_samples))
        })
        .expect("grid is non-empty")
}
