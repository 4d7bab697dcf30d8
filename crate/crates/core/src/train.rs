//! Maximum-likelihood training with Adam over BFS token sequences.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{DiscreteFlowModel, GradientMode, NormStats};
use crate::graph::LabeledGraph;
use crate::nn::{AdamConfig, Gradients};

/// Graphs per gradient chunk. Chunks are summed in index order so results do
/// not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of the dataset held out for NLL tracking.
    pub holdout_fraction: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub gradient_mode: GradientMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            holdout_fraction: 0.1,
            clip_norm: Some(10.0),
            gradient_mode: GradientMode::StraightThrough,
        }
    }
}

impl TrainConfig {
    /// Defaults for generic (non-molecular) graphs: batch size 16.
    pub fn generic() -> Self {
        Self { batch_size: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Invalid(format!("holdout fraction {} outside [0, 1)", self.holdout_fraction)));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Invalid(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    /// Mean NLL of the batch before the update.
    pub nll: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based; epoch 0 is the untrained model.
    pub epoch: usize,
    pub train_nll: f64,
    pub heldout_nll: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub initial_heldout_nll: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub train_size: usize,
    pub heldout_size: usize,
}

impl TrainReport {
    /// Loss curve as `epoch,step,nll` rows with a header.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,step,nll\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{}\n", s.epoch, s.step, s.nll));
        }
        out
    }
}

/// Seeded shuffle split into (train, held-out) index lists.
pub fn split_indices(len: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((len as f64) * holdout_fraction).round() as usize;
    let held = if len > 1 { held.min(len - 1) } else { 0 };
    let train = idx.split_off(held);
    (train, idx)
}

/// Mean `−log p(g)` over `dataset` with inference-mode normalization.
pub fn evaluate_nll(model: &DiscreteFlowModel, dataset: &[LabeledGraph]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Invalid("evaluate_nll needs at least one graph".into()));
    }
    let parts: Vec<f64> = dataset
        .par_chunks(64)
        .map(|chunk| {
            let refs: Vec<&LabeledGraph> = chunk.iter().collect();
            model.log_likelihoods(&refs).map(|lls| lls.iter().sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok(-parts.iter().sum::<f64>() / dataset.len() as f64)
}

/// Loss and gradient of the mean NLL of `batch`, chunked for parallelism.
pub fn batch_gradient(
    model: &DiscreteFlowModel,
    batch: &[&LabeledGraph],
    mode: GradientMode,
) -> Result<(f64, Gradients, Option<NormStats>)> {
    let scale = 1.0 / batch.len() as f64;
    let outputs = batch
        .par_chunks(CHUNK)
        .map(|chunk| model.surrogate_loss(chunk, scale, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = Gradients::zeros(model.params());
    let mut loss = 0.0;
    let mut stats = Vec::with_capacity(outputs.len());
    for out in outputs {
        loss += out.loss;
        grads.add(&out.grads);
        stats.extend(out.norm_stats);
    }
    Ok((loss, grads, NormStats::combine(&stats)))
}

/// One optimizer update; the model is untouched if the loss or gradient is
/// not finite.
pub fn train_step(model: &mut DiscreteFlowModel, batch: &[&LabeledGraph], config: &TrainConfig) -> Result<f64> {
    let (loss, mut grads, stats) = batch_gradient(model, batch, config.gradient_mode)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    if let Some(cap) = config.clip_norm {
        grads.clip_global_norm(cap);
    }
    model.params_mut().adam_step(grads, &AdamConfig::with_lr(config.learning_rate))?;
    if let Some(stats) = stats {
        model.update_norm_stats(&stats);
    }
    Ok(loss)
}

pub fn train(model: &mut DiscreteFlowModel, dataset: &[LabeledGraph], config: &TrainConfig) -> Result<TrainReport> {
    train_with(model, dataset, config, |_, _| Ok(()))
}

/// Trains for `config.epochs`, calling `on_epoch` after each epoch (for
/// checkpointing). On a non-finite loss the error is returned and the model
/// keeps the parameters of the last finished step.
pub fn train_with(
    model: &mut DiscreteFlowModel,
    dataset: &[LabeledGraph],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&DiscreteFlowModel, &EpochRecord) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    for g in dataset {
        model.alphabet().validate(g)?;
        g.bfs_order()?;
    }
    let (train_idx, held_idx) = split_indices(dataset.len(), config.holdout_fraction, config.seed);
    let heldout: Vec<LabeledGraph> = held_idx.iter().map(|&i| dataset[i].clone()).collect();
    let mut report = TrainReport { train_size: train_idx.len(), heldout_size: heldout.len(), ..TrainReport::default() };
    if config.epochs == 0 {
        return Ok(report);
    }
    report.initial_heldout_nll = if heldout.is_empty() { None } else { Some(evaluate_nll(model, &heldout)?) };
    // the split consumed stream 0 of this seed
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order = train_idx;
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledGraph> = chunk.iter().map(|&i| &dataset[i]).collect();
            let nll = train_step(model, &batch, config)?;
            total += nll * batch.len() as f64;
            seen += batch.len();
            report.steps.push(StepRecord { epoch, step, nll });
            step += 1;
        }
        let heldout_nll = if heldout.is_empty() { None } else { Some(evaluate_nll(model, &heldout)?) };
        let record = EpochRecord { epoch, train_nll: total / seen as f64, heldout_nll };
        log::info!("epoch {epoch}: train nll {:.4}, held-out nll {:?}", record.train_nll, record.heldout_nll);
        on_epoch(model, &record)?;
        report.epochs.push(record);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::flow::{FlowConfig, TokenKind};
    use crate::graph::Alphabet;
    use crate::testutil::random_graph;

    fn tiny(k: usize, c: usize, seed: u64) -> DiscreteFlowModel {
        let config = FlowConfig { depth: 2, rgcn_layers: 2, embed_width: 8, mlp_hidden: 8, st_temperature: 0.1 };
        DiscreteFlowModel::new(Alphabet::generic(k, c).unwrap(), config, seed).unwrap()
    }

    fn dataset(n: usize, seed: u64) -> Vec<LabeledGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| random_graph(&mut rng, 2 + i % 4, 3, 2)).collect()
    }

    #[test]
    fn single_node_type_becomes_near_certain() {
        let mut m = tiny(2, 1, 0);
        let data = vec![LabeledGraph::with_nodes(vec![0]); 4];
        let config = TrainConfig { epochs: 200, batch_size: 4, learning_rate: 0.05, holdout_fraction: 0.0, ..TrainConfig::default() };
        train(&mut m, &data, &config).unwrap();
        // one-node graphs have a single node token with no conditioning edges
        assert!(m.log_likelihood(&data[0]).unwrap().exp() >= 0.99);
        assert!(m.sampling_probs(TokenKind::Node, 1.0).iter().any(|&p| p >= 0.99));
    }

    #[test]
    fn zero_epochs_leave_the_model_unchanged() {
        let mut m = tiny(3, 2, 1);
        let before = m.to_checkpoint(true).to_bytes();
        train(&mut m, &dataset(10, 0), &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert_eq!(m.to_checkpoint(true).to_bytes(), before);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut m = tiny(3, 2, 2);
        let before = m.clone();
        let config = TrainConfig { epochs: 1, learning_rate: 0.0, batch_size: 4, ..TrainConfig::default() };
        train(&mut m, &dataset(12, 1), &config).unwrap();
        for id in m.params().ids() {
            assert_eq!(m.params().get(id), before.params().get(id), "{}", m.params().name(id));
        }
    }

    #[test]
    fn training_is_reproducible() {
        let data = dataset(20, 2);
        let config = TrainConfig { epochs: 2, batch_size: 6, ..TrainConfig::default() };
        let run = || {
            let mut m = tiny(3, 2, 3);
            let report = train(&mut m, &data, &config).unwrap();
            (m.to_checkpoint(true).to_bytes(), report)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn chunked_gradient_equals_whole_batch_gradient() {
        let m = tiny(3, 2, 4);
        let data = dataset(19, 3);
        let refs: Vec<&LabeledGraph> = data.iter().collect();
        let (loss, grads, _) = batch_gradient(&m, &refs, GradientMode::StraightThrough).unwrap();
        let whole = m.surrogate_loss(&refs, 1.0 / 19.0, GradientMode::StraightThrough).unwrap();
        assert_relative_eq!(loss, whole.loss, epsilon = 1e-10);
        for id in m.params().ids() {
            for (a, b) in grads.get(id).unwrap().data().iter().zip(whole.grads.get(id).unwrap().data()) {
                assert_relative_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn nll_of_uniform_identity_model_on_single_nodes() {
        let mut m = tiny(4, 1, 5);
        let ids: Vec<_> = m.params().ids().filter(|&id| m.params().name(id).starts_with("shift.")).collect();
        for id in ids {
            m.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let data: Vec<LabeledGraph> = (0..4).map(|t| LabeledGraph::with_nodes(vec![t])).collect();
        assert_relative_eq!(evaluate_nll(&m, &data).unwrap(), 4f64.ln(), epsilon = 1e-12);
        let doubled: Vec<LabeledGraph> = data.iter().chain(&data).cloned().collect();
        assert_eq!(evaluate_nll(&m, &doubled).unwrap(), evaluate_nll(&m, &data).unwrap());
        assert!(evaluate_nll(&tiny(3, 2, 0), &dataset(8, 4)).unwrap() >= 0.0);
    }

    #[test]
    fn split_holds_out_a_tenth() {
        let (train, held) = split_indices(100, 0.1, 7);
        assert_eq!((train.len(), held.len()), (90, 10));
        let mut all: Vec<usize> = train.iter().chain(&held).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(1, 0.5, 0).1.len(), 0);
    }

    #[test]
    fn disconnected_training_graphs_are_rejected() {
        let mut m = tiny(2, 1, 0);
        let data = vec![LabeledGraph::with_nodes(vec![0, 1])];
        assert!(matches!(train(&mut m, &data, &TrainConfig::default()), Err(Error::Disconnected { .. })));
    }
}
