//! Constrained optimization: restart generation from a BFS prefix of an
//! input molecule and look for outputs that score higher while staying
//! similar to it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;

/// The input with its last `removed` BFS nodes deleted; at least one node
/// is always kept.
pub fn constrained_init(g_in: &LabeledGraph, removed: usize) -> Result<LabeledGraph> {
    let canon = g_in.bfs_canonical()?;
    let n = canon.num_nodes();
    Ok(canon.prefix(n - removed.min(n - 1)))
}

/// [`constrained_init`] with `removed` drawn uniformly from `0..=max_removed`.
pub fn random_constrained_init(g_in: &LabeledGraph, max_removed: usize, rng: &mut impl Rng) -> Result<(LabeledGraph, usize)> {
    let removed = rng.gen_range(0..=max_removed);
    Ok((constrained_init(g_in, removed)?, removed))
}

/// One optimization output for an input molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct Attempt {
    pub smiles: String,
    pub improvement: f64,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputOutcome {
    pub input_smiles: String,
    pub attempts: Vec<Attempt>,
}

/// Highest-improvement attempt with similarity strictly above `delta`.
pub fn best_under(attempts: &[Attempt], delta: f64) -> Option<&Attempt> {
    attempts.iter().filter(|a| a.similarity > delta).max_by(|a, b| a.improvement.total_cmp(&b.improvement))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub input_smiles: String,
    pub best: Option<Attempt>,
    pub success: bool,
    pub delta: f64,
}

impl ResultRow {
    pub const HEADER: &'static str = "input_smiles,best_smiles,improvement,similarity,success,delta";

    pub fn to_csv(&self) -> String {
        let (smiles, imp, sim) = match &self.best {
            Some(a) => (a.smiles.as_str(), format!("{:.6}", a.improvement), format!("{:.6}", a.similarity)),
            None => ("", String::new(), String::new()),
        };
        format!("{},{},{},{},{},{}", self.input_smiles, smiles, imp, sim, u8::from(self.success), self.delta)
    }
}

/// Per-threshold statistics; means and deviations are over successful inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaSummary {
    pub delta: f64,
    pub inputs: usize,
    pub successes: usize,
    pub improvement_mean: f64,
    pub improvement_std: f64,
    pub similarity_mean: f64,
    pub similarity_std: f64,
}

impl DeltaSummary {
    /// Percentage of inputs with a successful output.
    pub fn success_rate(&self) -> f64 {
        if self.inputs == 0 {
            0.0
        } else {
            100.0 * self.successes as f64 / self.inputs as f64
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

/// Rows and summaries for each threshold. An input succeeds at `delta` when
/// its best qualifying improvement is positive.
pub fn summarize(outcomes: &[InputOutcome], deltas: &[f64]) -> (Vec<ResultRow>, Vec<DeltaSummary>) {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &delta in deltas {
        let (mut imps, mut sims) = (Vec::new(), Vec::new());
        for o in outcomes {
            let best = best_under(&o.attempts, delta).cloned();
            let success = best.as_ref().is_some_and(|b| b.improvement > 0.0);
            if success {
                let b = best.as_ref().expect("success implies a best attempt");
                imps.push(b.improvement);
                sims.push(b.similarity);
            }
            rows.push(ResultRow { input_smiles: o.input_smiles.clone(), best, success, delta });
        }
        let (improvement_mean, improvement_std) = mean_std(&imps);
        let (similarity_mean, similarity_std) = mean_std(&sims);
        summaries.push(DeltaSummary {
            delta,
            inputs: outcomes.len(),
            successes: imps.len(),
            improvement_mean,
            improvement_std,
            similarity_mean,
            similarity_std,
        });
    }
    (rows, summaries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstrainedConfig {
    /// Outputs generated per input after fine-tuning.
    pub attempts: usize,
    pub deltas: Vec<f64>,
    /// Upper bound of the number of trailing BFS nodes removed.
    pub max_removed: usize,
    pub fingerprint_radius: usize,
    pub fingerprint_width: usize,
}

impl Default for ConstrainedConfig {
    fn default() -> Self {
        Self { attempts: 200, deltas: vec![0.0, 0.2, 0.4, 0.6], max_removed: 5, fingerprint_radius: 2, fingerprint_width: 2048 }
    }
}

impl ConstrainedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fingerprint_width == 0 {
            return Err(Error::Invalid("fingerprint width must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::testutil::random_graph;

    fn attempt(improvement: f64, similarity: f64) -> Attempt {
        Attempt { smiles: format!("x{improvement}"), improvement, similarity }
    }

    #[test]
    fn prefixes() {
        let path = LabeledGraph::from_edges(vec![0, 1, 2], &[(0, 1, 0), (1, 2, 0)]).unwrap();
        assert_eq!(constrained_init(&path, 0).unwrap(), path);
        assert_eq!(constrained_init(&path, 1).unwrap(), LabeledGraph::from_edges(vec![0, 1], &[(0, 1, 0)]).unwrap());
        assert_eq!(constrained_init(&path, 9).unwrap().num_nodes(), 1);
    }

    #[test]
    fn prefixes_stay_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let n = rng.gen_range(1..12);
            let g = random_graph(&mut rng, n, 3, 2);
            let (prefix, m) = random_constrained_init(&g, 5, &mut rng).unwrap();
            assert!(prefix.is_connected());
            assert_eq!(prefix.num_nodes(), n - m.min(n - 1));
        }
    }

    #[test]
    fn unchanged_output_is_not_a_success() {
        let outcomes = vec![InputOutcome { input_smiles: "CC".into(), attempts: vec![attempt(0.0, 1.0)] }];
        let (rows, sums) = summarize(&outcomes, &[0.0]);
        assert!(!rows[0].success);
        assert_eq!(sums[0].successes, 0);
    }

    #[test]
    fn thresholds_select_the_best_similar_output() {
        let outcomes = vec![
            InputOutcome { input_smiles: "A".into(), attempts: vec![attempt(3.0, 0.1), attempt(1.0, 0.5), attempt(-1.0, 0.9)] },
            InputOutcome { input_smiles: "B".into(), attempts: vec![attempt(2.0, 0.3)] },
        ];
        let (rows, sums) = summarize(&outcomes, &[0.0, 0.2, 0.4, 0.6, 1.1]);
        // δ=0: A→3.0 (sim .1), B→2.0 (sim .3)
        assert_eq!((sums[0].successes, sums[0].improvement_mean, sums[0].improvement_std), (2, 2.5, 0.5));
        assert!((sums[0].similarity_mean - 0.2).abs() < 1e-15);
        // δ=0.2: A→1.0, B→2.0
        assert_eq!((sums[1].successes, sums[1].improvement_mean), (2, 1.5));
        // δ=0.4: A→1.0 only
        assert_eq!((sums[2].successes, sums[2].improvement_mean, sums[2].similarity_mean), (1, 1.0, 0.5));
        // δ=0.6: A's only qualifying output got worse
        assert_eq!(sums[3].successes, 0);
        assert_eq!(rows[6].best.as_ref().unwrap().improvement, -1.0);
        assert_eq!(sums[4].success_rate(), 0.0);
        assert_eq!(sums[0].success_rate(), 100.0);
        assert_eq!(rows[0].to_csv(), "A,x3,3.000000,0.100000,1,0");
    }
}
