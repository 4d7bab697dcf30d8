//! Clipped-ratio policy objective over the flow's action log-probabilities.

use crate::error::{Error, Result};
use crate::flow::{DiscreteFlowModel, GradientMode, Slot, TokenBatch};
use crate::graph::LabeledGraph;
use crate::nn::{Gradients, NormMode, Tape, Tensor, Var};
use crate::sampler::Episode;

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Episodes per iteration.
    pub batch_size: usize,
    /// Gradient steps per batch; the old policy is the one that sampled it.
    pub update_epochs: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self { clip_eps: 0.2, iterations: 200, learning_rate: 1e-4, batch_size: 8, update_epochs: 1, clip_norm: Some(10.0), seed: 0 }
    }
}

impl PpoConfig {
    /// Defaults for constrained optimization: batch size 16.
    pub fn constrained() -> Self {
        Self { batch_size: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Invalid(format!("clip epsilon {} outside (0, 1)", self.clip_eps)));
        }
        if self.batch_size == 0 || self.update_epochs == 0 {
            return Err(Error::Invalid("batch_size and update_epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        Ok(())
    }
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn ppo_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// A sampled episode with its starting graph, behaviour log-probabilities
/// and per-step advantages.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub start: LabeledGraph,
    pub episode: Episode,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl Rollout {
    /// Uses the log-probabilities recorded while sampling as the old policy.
    pub fn new(start: LabeledGraph, episode: Episode, advantages: Vec<f64>) -> Self {
        let old_log_probs = episode.steps.iter().map(|s| s.log_prob).collect();
        Self { start, episode, old_log_probs, advantages }
    }
}

/// Differentiable per-action log-probabilities of `rollouts` under `model`,
/// with their old log-probabilities and advantages aligned as columns.
struct Columns {
    new: Vec<Var>,
    old: Vec<Tensor>,
    advantages: Vec<Tensor>,
}

fn columns(model: &DiscreteFlowModel, tape: &mut Tape<'_>, rollouts: &[Rollout], mode: GradientMode) -> Result<Columns> {
    let tokens: Vec<Vec<_>> = rollouts.iter().map(|r| r.episode.steps.iter().map(|s| s.token).collect()).collect();
    let items: Vec<(&LabeledGraph, &[_])> = rollouts.iter().zip(&tokens).map(|(r, t)| (&r.start, t.as_slice())).collect();
    let batch = TokenBatch::from_continuations(&items, model.alphabet())?;
    let mut old = [vec![0.0; batch.node_tokens.len()], vec![0.0; batch.edge_tokens.len()]];
    let mut adv = old.clone();
    let mut position = 0;
    for (r, slots) in rollouts.iter().zip(&batch.slots) {
        if r.old_log_probs.len() != slots.len() || r.advantages.len() != slots.len() {
            return Err(Error::Invalid("rollout log-probs and advantages must cover every step".into()));
        }
        for (t, slot) in slots.iter().enumerate() {
            let lp = r.old_log_probs[t];
            if !lp.is_finite() {
                return Err(Error::ZeroOldProbability(position));
            }
            let (col, row) = match *slot {
                Slot::Node(n) => (0, n),
                Slot::Edge(e) => (1, e),
            };
            old[col][row] = lp;
            adv[col][row] = r.advantages[t];
            position += 1;
        }
    }
    let lps = model.token_log_probs(tape, &batch, NormMode::Eval, mode)?;
    let mut out = Columns { new: Vec::new(), old: Vec::new(), advantages: Vec::new() };
    for (col, var) in [lps.node, lps.edge].into_iter().enumerate() {
        if let Some(v) = var {
            let rows = old[col].len();
            out.new.push(v);
            out.old.push(Tensor::from_vec(rows, 1, std::mem::take(&mut old[col]))?);
            out.advantages.push(Tensor::from_vec(rows, 1, std::mem::take(&mut adv[col]))?);
        }
    }
    Ok(out)
}

/// `−(1/N) Σ_steps min(r·A, clip(r)·A)` over `N` rollouts and its gradient.
/// Ratios use inference-mode normalization, so they are exactly 1 when the
/// model has not moved since sampling.
pub fn ppo_loss(model: &DiscreteFlowModel, rollouts: &[Rollout], eps: f64, mode: GradientMode) -> Result<(f64, Gradients)> {
    if rollouts.is_empty() {
        return Err(Error::Invalid("ppo_loss needs at least one rollout".into()));
    }
    let mut tape = Tape::new(model.params());
    let cols = columns(model, &mut tape, rollouts, mode)?;
    let mut total: Option<Var> = None;
    for ((new, old), adv) in cols.new.into_iter().zip(cols.old).zip(cols.advantages) {
        let old = tape.constant(old);
        let diff = tape.sub(new, old);
        let ratio = tape.exp(diff);
        let plain = tape.mul_const(ratio, adv.clone());
        let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
        let clipped = tape.mul_const(clipped, adv);
        let term = tape.minimum(plain, clipped);
        let sum = tape.sum(term);
        total = Some(match total {
            Some(t) => tape.add(t, sum),
            None => sum,
        });
    }
    let total = total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)));
    let loss = tape.scale(total, -1.0 / rollouts.len() as f64);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("ppo loss"));
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

/// Exact log-probabilities of every recorded action under `model`.
pub fn action_log_probs(model: &DiscreteFlowModel, rollouts: &[Rollout]) -> Result<Vec<Vec<f64>>> {
    let tokens: Vec<Vec<_>> = rollouts.iter().map(|r| r.episode.steps.iter().map(|s| s.token).collect()).collect();
    let items: Vec<(&LabeledGraph, &[_])> = rollouts.iter().zip(&tokens).map(|(r, t)| (&r.start, t.as_slice())).collect();
    model.batch_token_log_probs(&TokenBatch::from_continuations(&items, model.alphabet())?)
}
