//! Reinforcement-learning fine-tuning of a trained flow: property
//! optimization from scratch and constrained optimization from prefixes of
//! given molecules.

mod constrained;
mod ppo;
mod reward;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use constrained::{
    best_under, constrained_init, random_constrained_init, summarize, Attempt, ConstrainedConfig, DeltaSummary,
    InputOutcome, ResultRow,
};
pub use ppo::{action_log_probs, ppo_loss, ppo_term, PpoConfig, Rollout};
pub use reward::{assign_rewards, episode_rewards, PropertyTransform, RewardSpec, StepReward};

use crate::chem::{canonical_form, morgan_fingerprint, score, tanimoto, write_smiles, Scorer};
use crate::error::{Error, Result};
use crate::flow::{DiscreteFlowModel, GradientMode};
use crate::graph::LabeledGraph;
use crate::nn::AdamConfig;
use crate::sampler::{episode_rng, generate_from, Episode, SampleConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean raw scorer value of the batch.
    pub mean_score: f64,
    pub mean_reward: f64,
    /// Loss of the last update on this batch.
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PropertyReport {
    pub iterations: Vec<IterationRecord>,
    /// Best distinct molecules seen, highest score first.
    pub top: Vec<(f64, String)>,
}

/// Runs `update_epochs` clipped-objective steps on one batch.
fn ppo_update(model: &mut DiscreteFlowModel, rollouts: &[Rollout], ppo: &PpoConfig) -> Result<f64> {
    let adam = AdamConfig::with_lr(ppo.learning_rate);
    let mut last = 0.0;
    for _ in 0..ppo.update_epochs {
        let (loss, mut grads) = ppo_loss(model, rollouts, ppo.clip_eps, GradientMode::StraightThrough)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("ppo gradient"));
        }
        if let Some(cap) = ppo.clip_norm {
            grads.clip_global_norm(cap);
        }
        model.params_mut().adam_step(grads, &adam)?;
        last = loss;
    }
    Ok(last)
}

fn sample_batch(
    model: &DiscreteFlowModel,
    sample: &SampleConfig,
    starts: &[LabeledGraph],
    seed: u64,
    first_index: u64,
) -> Result<Vec<Episode>> {
    starts
        .par_iter()
        .enumerate()
        .map(|(b, start)| generate_from(model, sample, start, &mut episode_rng(seed, first_index + b as u64)))
        .collect()
}

struct TopK {
    k: usize,
    seen: HashSet<String>,
    best: Vec<(f64, String)>,
}

impl TopK {
    fn offer(&mut self, score: f64, key: String, smiles: String) {
        if self.k == 0 || !self.seen.insert(key) {
            return;
        }
        self.best.push((score, smiles));
        self.best.sort_by(|a, b| b.0.total_cmp(&a.0));
        self.best.truncate(self.k);
    }
}

/// Fine-tunes `model` towards high `scorer` values. Each iteration samples
/// `ppo.batch_size` episodes from the empty graph with the current policy,
/// scores them, and applies the clipped update. Adam moments restart from
/// zero.
pub fn finetune_property(
    model: &mut DiscreteFlowModel,
    scorer: &mut Scorer,
    reward: &RewardSpec,
    ppo: &PpoConfig,
    sample: &SampleConfig,
    top_k: usize,
) -> Result<PropertyReport> {
    reward.validate()?;
    ppo.validate()?;
    sample.validate()?;
    let mut report = PropertyReport::default();
    if ppo.iterations == 0 {
        return Ok(report);
    }
    model.params_mut().reset_optimizer();
    let alphabet = model.alphabet().clone();
    let mut top = TopK { k: top_k, seen: HashSet::new(), best: Vec::new() };
    let starts = vec![LabeledGraph::new(); ppo.batch_size];
    for iteration in 0..ppo.iterations {
        let first = (iteration * ppo.batch_size) as u64;
        let episodes = sample_batch(model, sample, &starts, ppo.seed, first)?;
        let mut rollouts = Vec::with_capacity(episodes.len());
        let (mut score_sum, mut reward_sum) = (0.0, 0.0);
        for ep in episodes {
            let raw = score(&ep.graph, &alphabet, scorer)?;
            let r = reward.final_reward(&ep.graph, &alphabet, scorer, None)?;
            score_sum += raw;
            reward_sum += r;
            top.offer(raw, canonical_form(&ep.graph, &alphabet), write_smiles(&ep.graph, &alphabet));
            let adv = episode_rewards(&ep, r, reward).iter().map(|s| s.advantage).collect();
            rollouts.push(Rollout::new(LabeledGraph::new(), ep, adv));
        }
        let loss = ppo_update(model, &rollouts, ppo)?;
        let n = rollouts.len() as f64;
        let record = IterationRecord { iteration, mean_score: score_sum / n, mean_reward: reward_sum / n, loss };
        log::info!("rl iteration {iteration}: mean score {:.4}, loss {:.4}", record.mean_score, record.loss);
        report.iterations.push(record);
    }
    report.top = top.best;
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstrainedReport {
    pub iterations: Vec<IterationRecord>,
    pub outcomes: Vec<InputOutcome>,
    pub rows: Vec<ResultRow>,
    pub summaries: Vec<DeltaSummary>,
}

/// Fine-tunes on improvement over randomly drawn inputs restarted from BFS
/// prefixes, then generates `attempts` outputs per input and summarizes them
/// per similarity threshold.
pub fn finetune_constrained(
    model: &mut DiscreteFlowModel,
    inputs: &[LabeledGraph],
    scorer: &mut Scorer,
    reward: &RewardSpec,
    ppo: &PpoConfig,
    sample: &SampleConfig,
    config: &ConstrainedConfig,
) -> Result<ConstrainedReport> {
    reward.validate()?;
    ppo.validate()?;
    sample.validate()?;
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::Invalid("constrained optimization needs at least one input".into()));
    }
    let alphabet = model.alphabet().clone();
    let input_scores = inputs.iter().map(|g| score(g, &alphabet, scorer)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ppo.seed);
    let mut report = ConstrainedReport::default();
    if ppo.iterations > 0 {
        model.params_mut().reset_optimizer();
    }
    for iteration in 0..ppo.iterations {
        let picks: Vec<usize> = (0..ppo.batch_size).map(|_| rng.gen_range(0..inputs.len())).collect();
        let starts = picks
            .iter()
            .map(|&i| random_constrained_init(&inputs[i], config.max_removed, &mut rng).map(|(g, _)| g))
            .collect::<Result<Vec<_>>>()?;
        let first = (iteration * ppo.batch_size) as u64;
        let episodes = sample_batch(model, sample, &starts, ppo.seed ^ 1, first)?;
        let mut rollouts = Vec::with_capacity(episodes.len());
        let (mut score_sum, mut reward_sum) = (0.0, 0.0);
        for ((ep, start), &i) in episodes.into_iter().zip(starts).zip(&picks) {
            score_sum += score(&ep.graph, &alphabet, scorer)?;
            let r = reward.final_reward(&ep.graph, &alphabet, scorer, Some(reward.transform.apply(input_scores[i])))?;
            reward_sum += r;
            let adv = episode_rewards(&ep, r, reward).iter().map(|s| s.advantage).collect();
            rollouts.push(Rollout::new(start, ep, adv));
        }
        let loss = ppo_update(model, &rollouts, ppo)?;
        let n = rollouts.len() as f64;
        report.iterations.push(IterationRecord { iteration, mean_score: score_sum / n, mean_reward: reward_sum / n, loss });
    }

    let fp = |g: &LabeledGraph| morgan_fingerprint(g, config.fingerprint_radius, config.fingerprint_width);
    for (idx, g_in) in inputs.iter().enumerate() {
        let starts = (0..config.attempts)
            .map(|_| random_constrained_init(g_in, config.max_removed, &mut rng).map(|(g, _)| g))
            .collect::<Result<Vec<_>>>()?;
        let first = (idx * config.attempts) as u64;
        let episodes = sample_batch(model, sample, &starts, ppo.seed ^ 2, first)?;
        let fp_in = fp(g_in);
        let attempts = episodes
            .iter()
            .map(|ep| {
                Ok(Attempt {
                    smiles: write_smiles(&ep.graph, &alphabet),
                    improvement: score(&ep.graph, &alphabet, scorer)? - input_scores[idx],
                    similarity: tanimoto(&fp_in, &fp(&ep.graph)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        report.outcomes.push(InputOutcome { input_smiles: write_smiles(g_in, &alphabet), attempts });
    }
    let (rows, summaries) = summarize(&report.outcomes, &config.deltas);
    report.rows = rows;
    report.summaries = summaries;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, qm9};
    use crate::flow::FlowConfig;
    use crate::graph::Alphabet;

    fn tiny(alphabet: Alphabet, seed: u64) -> DiscreteFlowModel {
        let config = FlowConfig { depth: 2, rgcn_layers: 2, embed_width: 8, mlp_hidden: 8, st_temperature: 0.1 };
        DiscreteFlowModel::new(alphabet, config, seed).unwrap()
    }

    fn sample() -> SampleConfig {
        SampleConfig { max_nodes: 6, node_temperature: 1.0, edge_temperature: 1.0, ..SampleConfig::default() }
    }

    #[test]
    fn zero_iterations_leave_the_model_unchanged() {
        let mut m = tiny(qm9(), 0);
        let before = m.to_checkpoint(true).to_bytes();
        let ppo = PpoConfig { iterations: 0, ..PpoConfig::default() };
        let report = finetune_property(&mut m, &mut Scorer::Atoms, &RewardSpec::default(), &ppo, &sample(), 3).unwrap();
        assert!(report.iterations.is_empty());
        assert_eq!(m.to_checkpoint(true).to_bytes(), before);
    }

    #[test]
    fn zero_reward_does_not_move_parameters() {
        // generic alphabet: no valency, so no penalties either
        let mut m = tiny(Alphabet::generic(2, 1).unwrap(), 1);
        let before = m.clone();
        let reward = RewardSpec { transform: PropertyTransform::Scaled(0.0), ..RewardSpec::default() };
        let ppo = PpoConfig { iterations: 3, learning_rate: 1e-2, ..PpoConfig::default() };
        finetune_property(&mut m, &mut Scorer::Atoms, &reward, &ppo, &sample(), 0).unwrap();
        for id in m.params().ids() {
            for (a, b) in m.params().get(id).data().iter().zip(before.params().get(id).data()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn top_molecules_are_distinct_and_sorted() {
        let mut m = tiny(qm9(), 2);
        let ppo = PpoConfig { iterations: 2, ..PpoConfig::default() };
        let report = finetune_property(&mut m, &mut Scorer::Atoms, &RewardSpec::default(), &ppo, &sample(), 3).unwrap();
        assert_eq!(report.iterations.len(), 2);
        assert!(report.top.len() <= 3 && !report.top.is_empty());
        assert!(report.top.windows(2).all(|w| w[0].0 >= w[1].0));
        let distinct: HashSet<&String> = report.top.iter().map(|t| &t.1).collect();
        assert_eq!(distinct.len(), report.top.len());
    }

    #[test]
    fn constrained_run_reports_every_input_and_threshold() {
        let a = qm9();
        let mut m = tiny(a.clone(), 3);
        let inputs: Vec<LabeledGraph> = ["CCO", "CC(C)N"].iter().map(|s| parse_smiles(s, &a).unwrap()).collect();
        let ppo = PpoConfig { iterations: 1, batch_size: 4, ..PpoConfig::constrained() };
        let config = ConstrainedConfig { attempts: 5, ..ConstrainedConfig::default() };
        let report =
            finetune_constrained(&mut m, &inputs, &mut Scorer::Atoms, &RewardSpec::default(), &ppo, &sample(), &config).unwrap();
        assert_eq!(report.outcomes.len(), 2);
        assert!(report.outcomes.iter().all(|o| o.attempts.len() == 5));
        assert_eq!(report.rows.len(), 8);
        assert_eq!(report.summaries.len(), 4);
        for o in &report.outcomes {
            for att in &o.attempts {
                assert!((0.0..=1.0).contains(&att.similarity));
            }
        }
    }
}
