//! Sample-quality metrics: molecule validity, uniqueness, novelty and
//! reconstruction, and MMD over graph statistics.

mod mmd;
mod orbit;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

pub use mmd::{
    clustering_coefficients, clustering_histogram, degree_histogram, emd, gaussian_emd_kernel, histograms, mmd,
    mmd_histograms, orbit_histogram, Statistic, CLUSTERING_BINS,
};
pub use orbit::{orbit_counts, MAX_ORBIT_NODES, ORBIT_NAMES};

use crate::chem::{canonical_form, check_valency};
use crate::error::{Error, Result};
use crate::flow::DiscreteFlowModel;
use crate::graph::{Alphabet, LabeledGraph};
use crate::sampler::{reconstruct, Episode, Termination};

#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub numerator: usize,
    pub denominator: usize,
}

impl Metric {
    /// `100 · numerator / denominator`, 0 for an empty denominator.
    pub fn percentage(name: &str, numerator: usize, denominator: usize) -> Self {
        let value = if denominator == 0 { 0.0 } else { 100.0 * numerator as f64 / denominator as f64 };
        Self { name: name.to_string(), value, numerator, denominator }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub metadata: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// `key=value` lines; metrics also emit their numerator and denominator.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("{k}={v}\n"));
        }
        for m in &self.metrics {
            out.push_str(&format!("{}={:.4}\n{0}.numerator={}\n{0}.denominator={}\n", m.name, m.value, m.numerator, m.denominator));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16} {:>10} {:>12}\n", "metric", "value", "count");
        for m in &self.metrics {
            out.push_str(&format!("{:<16} {:>10.4} {:>12}\n", m.name, m.value, format!("{}/{}", m.numerator, m.denominator)));
        }
        out
    }
}

/// A sampled molecule counts as valid when it is connected, respects valency
/// and was not cut short by a violation.
pub fn is_valid_episode(episode: &Episode, alphabet: &Alphabet) -> bool {
    episode.termination != Termination::ValencyViolation && is_valid_molecule(&episode.graph, alphabet)
}

pub fn is_valid_molecule(g: &LabeledGraph, alphabet: &Alphabet) -> bool {
    !g.is_empty() && g.is_connected() && check_valency(alphabet, g)
}

/// Validity over all samples; uniqueness and novelty over valid samples.
/// Novelty counts valid samples (with repeats) whose canonical form is not
/// in `training_canonical`.
pub fn molecule_metrics(
    samples: &[LabeledGraph],
    training_canonical: &HashSet<String>,
    alphabet: &Alphabet,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let keys: Vec<Option<String>> = samples
        .par_iter()
        .map(|g| is_valid_molecule(g, alphabet).then(|| canonical_form(g, alphabet)))
        .collect();
    let valid: Vec<&String> = keys.iter().flatten().collect();
    let distinct: HashSet<&String> = valid.iter().copied().collect();
    let novel = valid.iter().filter(|k| !training_canonical.contains(k.as_str())).count();
    let mut report = MetricReport::default();
    report.metrics.push(Metric::percentage("validity", valid.len(), samples.len()));
    report.metrics.push(Metric::percentage("uniqueness", distinct.len(), valid.len()));
    report.metrics.push(Metric::percentage("novelty", novel, valid.len()));
    report.metadata.insert("samples".into(), samples.len().to_string());
    Ok(report)
}

/// Canonical forms of a training set.
pub fn canonical_set(graphs: &[LabeledGraph], alphabet: &Alphabet) -> HashSet<String> {
    graphs.par_iter().map(|g| canonical_form(g, alphabet)).collect()
}

/// Percentage of `graphs` that survive an inverse/forward round trip.
pub fn reconstruction_rate(model: &DiscreteFlowModel, graphs: &[LabeledGraph]) -> Result<Metric> {
    let passed = graphs
        .par_iter()
        .map(|g| reconstruct(model, g))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    Ok(Metric::percentage("reconstruction", passed, graphs.len()))
}

/// Total variation distance between two size histograms given as raw sizes.
pub fn size_total_variation(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut hist: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for &s in a {
        hist.entry(s).or_default().0 += 1.0 / a.len() as f64;
    }
    for &s in b {
        hist.entry(s).or_default().1 += 1.0 / b.len() as f64;
    }
    0.5 * hist.values().map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Picks `count` of `generated_sizes` (returning their indices) so that the
/// picked size histogram tracks `reference_sizes`: each pick takes the next
/// unused graph of the available size whose count lags its reference share
/// the most, ties to the smaller size.
pub fn node_distribution_match(generated_sizes: &[usize], count: usize, reference_sizes: &[usize]) -> Result<Vec<usize>> {
    if generated_sizes.len() < count {
        return Err(Error::Invalid(format!("need {count} generated graphs, have {}", generated_sizes.len())));
    }
    if reference_sizes.is_empty() {
        return Err(Error::Invalid("reference size list is empty".into()));
    }
    let mut share: BTreeMap<usize, f64> = BTreeMap::new();
    for &s in reference_sizes {
        *share.entry(s).or_default() += 1.0 / reference_sizes.len() as f64;
    }
    let mut pools: BTreeMap<usize, std::collections::VecDeque<usize>> = BTreeMap::new();
    for (i, &s) in generated_sizes.iter().enumerate() {
        pools.entry(s).or_default().push_back(i);
    }
    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    let mut picked = Vec::with_capacity(count);
    for step in 1..=count {
        let size = pools
            .iter()
            .filter(|(_, pool)| !pool.is_empty())
            .map(|(&s, _)| {
                let deficit = share.get(&s).copied().unwrap_or(0.0) * step as f64 - taken.get(&s).copied().unwrap_or(0) as f64;
                (s, deficit)
            })
            .fold(None, |best: Option<(usize, f64)>, (s, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((s, d)),
            })
            .map(|(s, _)| s)
            .expect("count <= available graphs");
        picked.push(pools.get_mut(&size).and_then(|p| p.pop_front()).expect("nonempty pool"));
        *taken.entry(size).or_default() += 1;
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, qm9};

    #[test]
    fn repeated_novel_molecule() {
        let a = qm9();
        let samples = vec![parse_smiles("CCO", &a).unwrap(); 4];
        let report = molecule_metrics(&samples, &HashSet::new(), &a).unwrap();
        assert_eq!(report.get("validity").unwrap().value, 100.0);
        assert_eq!(report.get("uniqueness").unwrap().value, 25.0);
        assert_eq!(report.get("novelty").unwrap().value, 100.0);
    }

    #[test]
    fn training_copies_are_not_novel() {
        let a = qm9();
        let train: Vec<LabeledGraph> = ["CCO", "C1CC1", "CN"].iter().map(|s| parse_smiles(s, &a).unwrap()).collect();
        let report = molecule_metrics(&train, &canonical_set(&train, &a), &a).unwrap();
        assert_eq!(report.get("novelty").unwrap().numerator, 0);
        assert_eq!(report.get("uniqueness").unwrap().value, 100.0);
    }

    #[test]
    fn invalid_samples_only_affect_validity() {
        let a = qm9();
        let mut bad = LabeledGraph::with_nodes(vec![3, 3, 3]);
        bad.add_edge(0, 1, 0).unwrap();
        bad.add_edge(0, 2, 0).unwrap();
        let samples = vec![bad, parse_smiles("CC", &a).unwrap()];
        let report = molecule_metrics(&samples, &HashSet::new(), &a).unwrap();
        assert_eq!((report.get("validity").unwrap().numerator, report.get("validity").unwrap().denominator), (1, 2));
        assert_eq!(report.get("uniqueness").unwrap().denominator, 1);
        assert!(molecule_metrics(&[], &HashSet::new(), &a).is_err());
        assert!(report.to_key_values().contains("validity=50.0000"));
    }

    #[test]
    fn size_matching() {
        let sizes = [3, 4, 4, 5, 5, 5];
        let picked = node_distribution_match(&sizes, 6, &sizes).unwrap();
        let got: Vec<usize> = picked.iter().map(|&i| sizes[i]).collect();
        assert_eq!(size_total_variation(&got, &sizes), 0.0);

        let generated = [5, 6, 5, 6, 5, 6];
        let picked = node_distribution_match(&generated, 3, &[5, 5]).unwrap();
        assert!(picked.iter().all(|&i| generated[i] == 5));

        let mut all = node_distribution_match(&generated, 6, &[5]).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(node_distribution_match(&generated, 7, &[5]).is_err());
    }
}
