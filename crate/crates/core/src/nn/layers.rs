use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;

use super::params::{BufferId, ParamId, ParamStore};
use super::tape::{Segments, Tape, Var};
use super::tensor::{SparseMatrix, Tensor};

/// Affine map `x·W + b` with `W` stored as in×out.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Weights and bias drawn from uniform(±1/√inputs).
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), inputs, outputs, bound, rng)?;
        let bias = store.add_uniform(format!("{name}.bias"), 1, outputs, bound, rng)?;
        Ok(Self { weight, bias, inputs, outputs })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// affine → tanh → affine
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.0"), inputs, hidden, rng)?,
            output: Linear::new(store, &format!("{name}.1"), hidden, outputs, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.hidden.inputs {
            return Err(Error::Shape { op: "mlp", detail: format!("input width {width}, expected {}", self.hidden.inputs) });
        }
        let h = self.hidden.forward(tape, x);
        let h = tape.tanh(h);
        Ok(self.output.forward(tape, h))
    }
}

/// Relational graph convolution without bias: each layer computes
/// `Σ_v ReLU(Â_v · H · W_v)` over the normalized per-relation operators.
#[derive(Clone, Debug, PartialEq)]
pub struct Rgcn {
    /// layer × relation
    pub weights: Vec<Vec<ParamId>>,
    pub inputs: usize,
    pub width: usize,
}

impl Rgcn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        width: usize,
        layers: usize,
        relations: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut weights = Vec::with_capacity(layers);
        for l in 0..layers {
            let fan_in = if l == 0 { inputs } else { width };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let per_rel = (0..relations)
                .map(|v| store.add_uniform(format!("{name}.{l}.{v}"), fan_in, width, bound, rng))
                .collect::<Result<Vec<_>>>()?;
            weights.push(per_rel);
        }
        Ok(Self { weights, inputs, width })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, operators: &[Arc<SparseMatrix>]) -> Var {
        let mut h = x;
        for layer in &self.weights {
            assert_eq!(layer.len(), operators.len(), "one operator per relation");
            let mut acc: Option<Var> = None;
            for (&w, op) in layer.iter().zip(operators) {
                let w = tape.param(w);
                let hw = tape.matmul(h, w);
                let msg = tape.spmm(Arc::clone(op), hw);
                let act = tape.relu(msg);
                acc = Some(match acc {
                    Some(a) => tape.add(a, act),
                    None => act,
                });
            }
            h = acc.expect("at least one relation");
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of each segment's rows.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(1, width, 1.0))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, width))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(1, width))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::filled(1, width, 1.0))?,
            momentum: 0.9,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, segments: Segments, mode: NormMode) -> Var {
        let gamma = tape.param(self.gamma);
        let beta = tape.param(self.beta);
        match mode {
            NormMode::Train => tape.batch_norm_train(x, gamma, beta, segments, self.eps),
            NormMode::Eval => {
                let store = tape.store();
                let (mean, var) = (store.buffer(self.running_mean), store.buffer(self.running_var));
                tape.batch_norm_eval(x, gamma, beta, mean, var, self.eps)
            }
        }
    }

    /// `running ← momentum·running + (1 − momentum)·observed`
    pub fn update_running(&self, store: &mut ParamStore, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, o) in store.buffer_mut(self.running_mean).data_mut().iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * o;
        }
        for (r, o) in store.buffer_mut(self.running_var).data_mut().iter_mut().zip(var) {
            *r = m * *r + (1.0 - m) * o;
        }
    }
}

/// Per-relation operators `D̃^{-1/2}(A_v + I)D̃^{-1/2}` of the block-diagonal
/// union of `graphs`, in order.
pub fn relation_operators(graphs: &[&LabeledGraph], relations: usize) -> Vec<Arc<SparseMatrix>> {
    let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
    (0..relations)
        .map(|v| {
            let mut rows = Vec::with_capacity(total);
            let mut offset = 0;
            for g in graphs {
                let deg: Vec<f64> = (0..g.num_nodes())
                    .map(|i| 1.0 + g.neighbors(i).iter().filter(|&&(_, t)| t == v).count() as f64)
                    .collect();
                for i in 0..g.num_nodes() {
                    let mut row = Vec::new();
                    let mut self_done = false;
                    for &(j, t) in g.neighbors(i) {
                        if t != v {
                            continue;
                        }
                        if !self_done && j > i {
                            row.push((offset + i, 1.0 / deg[i]));
                            self_done = true;
                        }
                        row.push((offset + j, 1.0 / (deg[i] * deg[j]).sqrt()));
                    }
                    if !self_done {
                        row.push((offset + i, 1.0 / deg[i]));
                    }
                    rows.push(row);
                }
                offset += g.num_nodes();
            }
            Arc::new(SparseMatrix::from_rows(total, rows))
        })
        .collect()
}

/// One-hot node-type rows of the union of `graphs`.
pub fn node_features(graphs: &[&LabeledGraph], width: usize) -> Tensor {
    let types: Vec<usize> = graphs.iter().flat_map(|g| g.node_types().iter().copied()).collect();
    Tensor::one_hot(&types, width)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::testutil::{gradcheck, random_graph};
    use crate::nn::tape::ShiftDir;

    #[test]
    fn linear_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let lin = Linear::new(&mut store, "lin", 3, 3, &mut rng).unwrap();
            let x = Tensor::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let target = Tensor::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let err = gradcheck(&store, |s| {
                let mut tape = Tape::new(s);
                let xv = tape.constant(x.clone());
                let y = lin.forward(&mut tape, xv);
                let y = tape.mul_const(y, target.clone());
                let l = tape.sum(y);
                (tape.value(l).item(), tape.backward(l).unwrap())
            });
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn mlp_rgcn_batchnorm_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (k, c, width) = (3, 2, 4);
            let graphs: Vec<LabeledGraph> = (0..3).map(|i| random_graph(&mut rng, 2 + i + seed as usize % 3, k, c)).collect();
            let refs: Vec<&LabeledGraph> = graphs.iter().collect();
            let ops = relation_operators(&refs, c);
            let x = node_features(&refs, k);
            let mut segs = Vec::new();
            let mut at = 0;
            for g in &graphs {
                segs.push(at..at + g.num_nodes());
                at += g.num_nodes();
            }
            let segments: Segments = segs.into();
            let mut store = ParamStore::new();
            let rgcn = Rgcn::new(&mut store, "rgcn", k, width, 2, c, &mut rng).unwrap();
            let bn = BatchNorm::new(&mut store, "bn", width).unwrap();
            // non-trivial affine so its gradient path is exercised
            for v in store.get_mut(bn.gamma).data_mut() {
                *v = rng.gen_range(0.5..1.5);
            }
            let mlp = Mlp::new(&mut store, "mlp", width, 5, 3, &mut rng).unwrap();
            let weights = Tensor::from_vec(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            for mode in [NormMode::Train, NormMode::Eval] {
                let err = gradcheck(&store, |s| {
                    let mut tape = Tape::new(s);
                    let xv = tape.constant(x.clone());
                    let h = rgcn.forward(&mut tape, xv, &ops);
                    let h = bn.forward(&mut tape, h, segments.clone(), mode);
                    let pooled = tape.segment_sum(h, segments.clone());
                    let logits = mlp.forward(&mut tape, pooled).unwrap();
                    let lp = tape.log_softmax(logits);
                    let lp = tape.mul_const(lp, weights.clone());
                    let l = tape.sum(lp);
                    (tape.value(l).item(), tape.backward(l).unwrap())
                });
                assert!(err < 1e-5, "seed {seed} {mode:?}: {err}");
            }
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let mut store = ParamStore::new();
            let a = store.add_uniform("a", 3, 4, 1.0, &mut rng).unwrap();
            let b = store.add_uniform("b", 3, 4, 1.0, &mut rng).unwrap();
            let row = store.add_uniform("row", 1, 4, 1.0, &mut rng).unwrap();
            let err = gradcheck(&store, |s| {
                let mut tape = Tape::new(s);
                let (av, bv, rv) = (tape.param(a), tape.param(b), tape.param(row));
                let e = tape.exp(av);
                let prod = tape.mul(e, bv);
                let diff = tape.sub(prod, av);
                let cl = tape.clamp(diff, -0.8, 0.8);
                let mn = tape.minimum(cl, bv);
                let sm = tape.softmax(mn, 0.7);
                let gathered = tape.gather(sm, vec![2, 0, 2]);
                let cat = tape.concat_cols(&[gathered, av]);
                let sc = tape.scale(cat, 1.3);
                let dots = tape.row_dot(av, rv);
                let l1 = tape.sum(sc);
                let l2 = tape.sum(dots);
                let sq = tape.mul(l2, l2);
                let l = tape.add(l1, sq);
                (tape.value(l).item(), tape.backward(l).unwrap())
            });
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn soft_cyclic_shift_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let mut store = ParamStore::new();
            let z = store.add_uniform("z", 2, 4, 1.0, &mut rng).unwrap();
            let m = store.add_uniform("m", 2, 4, 1.0, &mut rng).unwrap();
            let w = Tensor::from_vec(2, 4, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            for dir in [ShiftDir::Forward, ShiftDir::Inverse] {
                let err = gradcheck(&store, |s| {
                    let mut tape = Tape::new(s);
                    let (zv, mv) = (tape.param(z), tape.param(m));
                    let p = tape.softmax(mv, 0.5);
                    let out = tape.cyclic_shift(zv, p, dir);
                    let out = tape.mul_const(out, w.clone());
                    let l = tape.sum(out);
                    (tape.value(l).item(), tape.backward(l).unwrap())
                });
                assert!(err < 1e-5, "seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn relu_and_tanh_derivatives() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row_vector(vec![0.5, 2.0])).unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let r = tape.relu(xv);
        let l = tape.sum(r);
        assert_eq!(tape.backward(l).unwrap().get(x).unwrap().data(), &[1.0, 1.0]);

        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(0.0)).unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let t = tape.tanh(xv);
        assert_eq!(tape.backward(t).unwrap().get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn consumed_trace_is_rejected() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0)).unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let l = tape.sum(xv);
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::TraceConsumed)));
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1000.0)).unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let e = tape.exp(xv);
        assert!(matches!(tape.backward(e), Err(Error::NonFinite("exp"))));
    }

    #[test]
    fn single_isolated_node_uses_identity_normalization() {
        let g = LabeledGraph::with_nodes(vec![1]);
        let ops = relation_operators(&[&g], 2);
        for op in ops {
            assert_eq!(op.to_dense().data(), &[1.0]);
        }
    }

    #[test]
    fn two_node_hand_computed_layer() {
        // Â = [[1/2, 1/2], [1/2, 1/2]] for relation 0, identity for relation 1
        let g = LabeledGraph::from_edges(vec![0, 0], &[(0, 1, 0)]).unwrap();
        let ops = relation_operators(&[&g], 2);
        assert_eq!(ops[0].to_dense().data(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(ops[1].to_dense().data(), &[1.0, 0.0, 0.0, 1.0]);
        let mut store = ParamStore::new();
        let rgcn = Rgcn {
            weights: vec![vec![
                store.add("w0", Tensor::scalar(2.0)).unwrap(),
                store.add("w1", Tensor::scalar(-1.0)).unwrap(),
            ]],
            inputs: 1,
            width: 1,
        };
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::from_vec(2, 1, vec![1.0, 3.0]).unwrap());
        let h = rgcn.forward(&mut tape, x, &ops);
        // relation 0: ReLU(0.5·(1+3)·2) = 4; relation 1: ReLU(−x) = 0
        assert_eq!(tape.value(h).data(), &[4.0, 4.0]);
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let g = LabeledGraph::from_edges(vec![0, 1, 0], &[(0, 1, 0), (1, 2, 1)]).unwrap();
        let ops = relation_operators(&[&g], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let rgcn = Rgcn::new(&mut store, "r", 2, 3, 3, 2, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new(&store);
        let x = tape.constant(node_features(&[&g], 2));
        let h = rgcn.forward(&mut tape, x, &ops);
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_toy_values() {
        let mut store = ParamStore::new();
        let mlp = Mlp {
            hidden: Linear {
                weight: store.add("w1", Tensor::scalar(1.0)).unwrap(),
                bias: store.add("b1", Tensor::scalar(0.0)).unwrap(),
                inputs: 1,
                outputs: 1,
            },
            output: Linear {
                weight: store.add("w2", Tensor::scalar(1.0)).unwrap(),
                bias: store.add("b2", Tensor::scalar(0.0)).unwrap(),
                inputs: 1,
                outputs: 1,
            },
        };
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::from_vec(2, 1, vec![0.0, 1.0]).unwrap());
        let y = mlp.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).get(0, 0), 0.0);
        assert_relative_eq!(tape.value(y).get(1, 0), 0.7615941559557649, epsilon = 1e-15);
        let bad = tape.constant(Tensor::zeros(1, 2));
        assert!(mlp.forward(&mut tape, bad).is_err());
    }

    #[test]
    fn batch_norm_identical_rows_and_inference_identity() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::from_vec(2, 2, vec![0.3, -1.0, 0.3, -1.0]).unwrap());
        let seg: Segments = std::iter::once(0..2).collect::<Vec<_>>().into();
        let y = bn.forward(&mut tape, x, seg.clone(), NormMode::Train);
        let h = tape.segment_sum(y, seg.clone());
        // identical rows normalize to 0, leaving 2·β = 0
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
        let one: Segments = std::iter::once(0..1).collect::<Vec<_>>().into();
        let x1 = tape.constant(Tensor::row_vector(vec![0.25, -2.0]));
        let y1 = bn.forward(&mut tape, x1, one.clone(), NormMode::Eval);
        let h1 = tape.segment_sum(y1, one);
        for (got, want) in tape.value(h1).data().iter().zip([0.25, -2.0]) {
            assert_relative_eq!(*got, want / (1.0 + 1e-5f64).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::from_vec(5, 7, (0..35).map(|_| rng.gen_range(-30.0..30.0)).collect()).unwrap());
        let p = tape.softmax(x, 0.1);
        for r in 0..5 {
            assert!((tape.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embeddings_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(&mut rng, 7, 3, 2);
        let perm = vec![3, 0, 6, 1, 5, 2, 4];
        let p = g.permuted(&perm).unwrap();
        let mut store = ParamStore::new();
        let rgcn = Rgcn::new(&mut store, "r", 3, 4, 3, 2, &mut rng).unwrap();
        let run = |g: &LabeledGraph| {
            let mut tape = Tape::new(&store);
            let x = tape.constant(node_features(&[g], 3));
            let h = rgcn.forward(&mut tape, x, &relation_operators(&[g], 2));
            tape.value(h).clone()
        };
        let (hg, hp) = (run(&g), run(&p));
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((hp.get(new, c) - hg.get(old, c)).abs() < 1e-12);
            }
        }
    }
}
