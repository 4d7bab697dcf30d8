//! Squared maximum mean discrepancy between sets of graphs, with a Gaussian
//! kernel over the 1-D earth mover's distance of per-graph histograms.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;

use super::orbit::orbit_counts;

/// Bins of the clustering-coefficient histogram on [0, 1].
pub const CLUSTERING_BINS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Statistic {
    Degree,
    Clustering,
    Orbit,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::Degree, Statistic::Clustering, Statistic::Orbit];

    pub fn name(self) -> &'static str {
        match self {
            Self::Degree => "degree",
            Self::Clustering => "cluster",
            Self::Orbit => "orbit",
        }
    }

    /// Normalized histogram of this statistic for one graph.
    pub fn histogram(self, g: &LabeledGraph) -> Result<Vec<f64>> {
        let raw = match self {
            Self::Degree => degree_histogram(g),
            Self::Clustering => clustering_histogram(g),
            Self::Orbit => orbit_histogram(g)?,
        };
        Ok(normalize(raw))
    }
}

fn normalize(mut h: Vec<f64>) -> Vec<f64> {
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        h.iter_mut().for_each(|x| *x /= total);
    }
    h
}

/// Counts of nodes per degree, indices 0..=max degree.
pub fn degree_histogram(g: &LabeledGraph) -> Vec<f64> {
    let max = (0..g.num_nodes()).map(|i| g.degree(i)).max().unwrap_or(0);
    let mut h = vec![0.0; max + 1];
    for i in 0..g.num_nodes() {
        h[g.degree(i)] += 1.0;
    }
    h
}

/// Local clustering coefficient of every node; 0 below degree 2.
pub fn clustering_coefficients(g: &LabeledGraph) -> Vec<f64> {
    (0..g.num_nodes())
        .map(|i| {
            let nbrs = g.neighbors(i);
            let d = nbrs.len();
            if d < 2 {
                return 0.0;
            }
            let mut links = 0;
            for (a, &(u, _)) in nbrs.iter().enumerate() {
                for &(v, _) in &nbrs[a + 1..] {
                    links += usize::from(g.edge(u, v).is_some());
                }
            }
            2.0 * links as f64 / (d * (d - 1)) as f64
        })
        .collect()
}

pub fn clustering_histogram(g: &LabeledGraph) -> Vec<f64> {
    let mut h = vec![0.0; CLUSTERING_BINS];
    for c in clustering_coefficients(g) {
        h[((c * CLUSTERING_BINS as f64) as usize).min(CLUSTERING_BINS - 1)] += 1.0;
    }
    h
}

/// Orbit totals over all nodes, indexed by orbit.
pub fn orbit_histogram(g: &LabeledGraph) -> Result<Vec<f64>> {
    let mut h = vec![0.0; 11];
    for row in orbit_counts(g)? {
        for (k, &c) in row.iter().enumerate() {
            h[k] += c as f64;
        }
    }
    Ok(h)
}

/// Earth mover's distance between two histograms on unit-spaced bins; the
/// shorter one is zero-padded.
pub fn emd(a: &[f64], b: &[f64]) -> f64 {
    let (mut ca, mut cb, mut total) = (0.0, 0.0, 0.0);
    for k in 0..a.len().max(b.len()) {
        ca += a.get(k).copied().unwrap_or(0.0);
        cb += b.get(k).copied().unwrap_or(0.0);
        total += (ca - cb).abs();
    }
    total
}

pub fn gaussian_emd_kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d = emd(a, b);
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Mean kernel value over all pairs. Values are summed in sorted order so
/// the result does not depend on which set comes first.
fn mean_kernel(xs: &[Vec<f64>], ys: &[Vec<f64>], sigma: f64) -> f64 {
    let mut values: Vec<f64> =
        xs.par_iter().flat_map_iter(|x| ys.iter().map(move |y| gaussian_emd_kernel(x, y, sigma))).collect();
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Squared MMD between precomputed histogram sets, clamped at 0.
pub fn mmd_histograms(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("mmd needs two nonempty sets".into()));
    }
    let value = mean_kernel(a, a, sigma) + mean_kernel(b, b, sigma) - 2.0 * mean_kernel(a, b, sigma);
    Ok(value.max(0.0))
}

pub fn histograms(graphs: &[LabeledGraph], stat: Statistic) -> Result<Vec<Vec<f64>>> {
    graphs.par_iter().map(|g| stat.histogram(g)).collect()
}

/// Squared MMD of `stat` between two graph sets with σ = 1.
pub fn mmd(a: &[LabeledGraph], b: &[LabeledGraph], stat: Statistic) -> Result<f64> {
    mmd_histograms(&histograms(a, stat)?, &histograms(b, stat)?, 1.0)
}
