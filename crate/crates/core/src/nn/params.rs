use rand::Rng;

use crate::error::{Error, Result};

use super::checkpoint::{AdamState, Checkpoint};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named trainable tensors with their Adam moments, plus named buffers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
    buffer_names: Vec<String>,
    buffers: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_fresh(&self, name: &str) -> Result<()> {
        if self.names.iter().chain(&self.buffer_names).any(|n| n == name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        Ok(())
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        self.ensure_fresh(&name)?;
        let (r, c) = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.first_moment.push(Tensor::zeros(r, c));
        self.second_moment.push(Tensor::zeros(r, c));
        Ok(ParamId(self.values.len() - 1))
    }

    /// Entries drawn from uniform(−bound, bound).
    pub fn add_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<BufferId> {
        let name = name.into();
        self.ensure_fresh(&name)?;
        self.buffer_names.push(name);
        self.buffers.push(value);
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.buffers[id.0]
    }

    /// Adam updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Drops accumulated Adam moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            m.data_mut().fill(0.0);
        }
        self.step = 0;
    }

    /// One bias-corrected Adam update. Consumes the gradients.
    pub fn adam_step(&mut self, grads: Gradients, config: &AdamConfig) -> Result<()> {
        if grads.grads.len() != self.values.len() {
            return Err(Error::MissingGradient(format!(
                "{} gradients for {} parameters",
                grads.grads.len(),
                self.values.len()
            )));
        }
        if let Some(i) = grads.grads.iter().position(Option::is_none) {
            return Err(Error::MissingGradient(self.names[i].clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        for (i, g) in grads.grads.into_iter().enumerate() {
            let g = g.expect("checked above");
            let value = self.values[i].data_mut();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for k in 0..value.len() {
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g.data()[k];
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g.data()[k] * g.data()[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                value[k] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
            }
        }
        Ok(())
    }

    /// Parameters and buffers as named arrays, optionally with Adam state.
    pub fn to_checkpoint(&self, include_optimizer: bool) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        for (name, value) in self.names.iter().zip(&self.values) {
            ckpt.arrays.insert(name.clone(), value.clone());
        }
        for (name, value) in self.buffer_names.iter().zip(&self.buffers) {
            ckpt.arrays.insert(name.clone(), value.clone());
        }
        if include_optimizer {
            let mut adam = AdamState { step: self.step, ..AdamState::default() };
            for (i, name) in self.names.iter().enumerate() {
                adam.first_moment.insert(name.clone(), self.first_moment[i].clone());
                adam.second_moment.insert(name.clone(), self.second_moment[i].clone());
            }
            ckpt.adam = Some(adam);
        }
        ckpt
    }

    /// Overwrites every parameter and buffer from `ckpt`; names and shapes
    /// must match exactly. Adam state is restored when present, reset otherwise.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let expected = self.names.len() + self.buffer_names.len();
        if ckpt.arrays.len() != expected {
            return Err(Error::Checkpoint(format!("{} arrays, model has {expected}", ckpt.arrays.len())));
        }
        let fetch = |name: &str, like: &Tensor, table: &std::collections::BTreeMap<String, Tensor>| -> Result<Tensor> {
            let t = table.get(name).ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))?;
            if t.shape() != like.shape() {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {:?}", t.shape(), like.shape())));
            }
            Ok(t.clone())
        };
        let values = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| fetch(n, v, &ckpt.arrays))
            .collect::<Result<Vec<_>>>()?;
        let buffers = self
            .buffer_names
            .iter()
            .zip(&self.buffers)
            .map(|(n, v)| fetch(n, v, &ckpt.arrays))
            .collect::<Result<Vec<_>>>()?;
        let (first, second, step) = match &ckpt.adam {
            Some(adam) => {
                let f = self.names.iter().zip(&self.values).map(|(n, v)| fetch(n, v, &adam.first_moment)).collect::<Result<Vec<_>>>()?;
                let s = self.names.iter().zip(&self.values).map(|(n, v)| fetch(n, v, &adam.second_moment)).collect::<Result<Vec<_>>>()?;
                (f, s, adam.step)
            }
            None => (
                self.values.iter().map(|v| Tensor::zeros(v.rows(), v.cols())).collect(),
                self.values.iter().map(|v| Tensor::zeros(v.rows(), v.cols())).collect(),
                0,
            ),
        };
        self.values = values;
        self.buffers = buffers;
        self.first_moment = first;
        self.second_moment = second;
        self.step = step;
        Ok(())
    }
}

/// One gradient slot per parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// All slots unset; [`ParamStore::adam_step`] rejects this until filled.
    pub fn empty(store: &ParamStore) -> Self {
        Self { grads: vec![None; store.len()] }
    }

    pub fn zeros(store: &ParamStore) -> Self {
        Self { grads: store.values.iter().map(|v| Some(Tensor::zeros(v.rows(), v.cols()))).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, g: Tensor) {
        self.grads[id.0] = Some(g);
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Elementwise sum; slots set on either side stay set.
    pub fn add(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(x)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_store(0.3);
        s.adam_step(Gradients::zeros(&s), &AdamConfig::default()).unwrap();
        assert_eq!(s.get(id).item(), 0.3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = scalar_store(0.0);
        let mut g = Gradients::empty(&s);
        g.set(id, Tensor::scalar(1.0));
        s.adam_step(g, &AdamConfig::with_lr(0.001)).unwrap();
        assert_relative_eq!(s.get(id).item(), -0.001, max_relative = 1e-6);
    }

    #[test]
    fn repeated_positive_gradient_decreases() {
        let (mut s, id) = scalar_store(0.0);
        let mut last = 0.0;
        for _ in 0..2 {
            let mut g = Gradients::empty(&s);
            g.set(id, Tensor::scalar(1.0));
            s.adam_step(g, &AdamConfig::default()).unwrap();
            assert!(s.get(id).item() < last);
            last = s.get(id).item();
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut s, _) = scalar_store(0.0);
        assert!(matches!(s.adam_step(Gradients::empty(&s), &AdamConfig::default()), Err(Error::MissingGradient(_))));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (mut s, id) = scalar_store(1.5);
        let mut g = Gradients::empty(&s);
        g.set(id, Tensor::scalar(-4.0));
        s.adam_step(g, &AdamConfig::with_lr(0.0)).unwrap();
        assert_eq!(s.get(id).item(), 1.5);
    }

    #[test]
    fn clipping_bounds_norm() {
        let (s, id) = scalar_store(0.0);
        let mut g = Gradients::empty(&s);
        g.set(id, Tensor::scalar(30.0));
        assert_eq!(g.clip_global_norm(10.0), 30.0);
        assert_relative_eq!(g.global_norm(), 10.0);
    }
}
