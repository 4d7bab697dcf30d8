//! Discrete flow over graph token sequences: multinomial priors pushed
//! through `depth` modulo-shift layers whose shifts come from MLP heads on
//! R-GCN embeddings of the sub-graph generated so far.

mod batch;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use batch::{Slot, StateUnion, TokenBatch};

/// Per-level shift indices, one row per token.
pub type Shifts = Vec<Vec<usize>>;

use crate::error::{Error, Result};
use crate::graph::{to_sequence, Alphabet, GraphSequence, LabeledGraph};
use crate::nn::{
    log_sum_exp, BatchNorm, Checkpoint, Gradients, Mlp, NormMode, ParamId, ParamStore, Rgcn, ShiftDir, Tape, Tensor, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Node,
    Edge,
}

/// How the shift argmax is differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    /// Hard argmax forward, softmax(logits / τ) Jacobian backward.
    StraightThrough,
    /// softmax(logits / τ) in both passes; a smooth debugging relaxation.
    FullySoft,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    /// Number of modulo-shift layers.
    pub depth: usize,
    pub rgcn_layers: usize,
    /// Node embedding width of every R-GCN layer.
    pub embed_width: usize,
    pub mlp_hidden: usize,
    /// Softmax temperature of the straight-through backward pass.
    pub st_temperature: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { depth: 12, rgcn_layers: 3, embed_width: 128, mlp_hidden: 128, st_temperature: 0.1 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.rgcn_layers == 0 || self.embed_width == 0 || self.mlp_hidden == 0 {
            return Err(Error::Invalid("flow depth, layers and widths must be >= 1".into()));
        }
        if !(self.st_temperature > 0.0 && self.st_temperature.is_finite()) {
            return Err(Error::Invalid("straight-through temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Sub-graph a token is generated from.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    /// Next node type given the current graph.
    Node(&'a LabeledGraph),
    /// Edge between the newest node `i` and an earlier node `j`.
    Edge { graph: &'a LabeledGraph, i: usize, j: usize },
}

/// Per-state quantities the shift heads read.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// Pooled graph embedding; zeros for the empty graph.
    pub graph: Tensor,
    /// R-GCN node embeddings, one row per node.
    pub nodes: Tensor,
}

/// Summary of the batch-norm statistics seen in one training forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Non-empty states the means were taken over.
    pub states: usize,
}

impl NormStats {
    /// State-weighted average of several passes.
    pub fn combine(parts: &[NormStats]) -> Option<NormStats> {
        let total: usize = parts.iter().map(|p| p.states).sum();
        let first = parts.iter().find(|p| p.states > 0)?;
        let width = first.mean.len();
        let mut mean = vec![0.0; width];
        let mut var = vec![0.0; width];
        for p in parts {
            let w = p.states as f64 / total as f64;
            for c in 0..width {
                mean[c] += w * p.mean[c];
                var[c] += w * p.var[c];
            }
        }
        Some(NormStats { mean, var, states: total })
    }
}

pub struct SurrogateOutput {
    /// `−scale · Σ log p` over every token of every sequence.
    pub loss: f64,
    pub grads: Gradients,
    pub norm_stats: Option<NormStats>,
}

/// Differentiable per-token log-probabilities, node and edge tokens in
/// separate T×1 columns in [`TokenBatch`] order.
pub struct TokenLogProbs {
    pub node: Option<Var>,
    pub edge: Option<Var>,
    norm: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteFlowModel {
    alphabet: Alphabet,
    config: FlowConfig,
    store: ParamStore,
    node_prior: ParamId,
    edge_prior: ParamId,
    rgcn: Rgcn,
    norm: BatchNorm,
    node_heads: Vec<Mlp>,
    edge_heads: Vec<Mlp>,
}

impl DiscreteFlowModel {
    /// Fresh model; prior logits start at zero (uniform priors).
    pub fn new(alphabet: Alphabet, config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, c) = (alphabet.num_node_types(), alphabet.num_edge_types());
        let r = config.embed_width;
        let mut store = ParamStore::new();
        let node_prior = store.add("prior.node", Tensor::zeros(1, k))?;
        let edge_prior = store.add("prior.edge", Tensor::zeros(1, c + 1))?;
        let rgcn = Rgcn::new(&mut store, "rgcn", k, r, config.rgcn_layers, c, &mut rng)?;
        let norm = BatchNorm::new(&mut store, "norm", r)?;
        let mut node_heads = Vec::with_capacity(config.depth);
        let mut edge_heads = Vec::with_capacity(config.depth);
        for d in 0..config.depth {
            node_heads.push(Mlp::new(&mut store, &format!("shift.{d}.node"), r, config.mlp_hidden, k, &mut rng)?);
            edge_heads.push(Mlp::new(&mut store, &format!("shift.{d}.edge"), 3 * r, config.mlp_hidden, c + 1, &mut rng)?);
        }
        Ok(Self { alphabet, config, store, node_prior, edge_prior, rgcn, norm, node_heads, edge_heads })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn node_prior_id(&self) -> ParamId {
        self.node_prior
    }

    pub fn edge_prior_id(&self) -> ParamId {
        self.edge_prior
    }

    pub fn rgcn(&self) -> &Rgcn {
        &self.rgcn
    }

    pub fn node_heads(&self) -> &[Mlp] {
        &self.node_heads
    }

    pub fn edge_heads(&self) -> &[Mlp] {
        &self.edge_heads
    }

    /// Category count of a token kind: `k` for nodes, `c + 1` for edges.
    pub fn categories(&self, kind: TokenKind) -> usize {
        match kind {
            TokenKind::Node => self.alphabet.num_node_types(),
            TokenKind::Edge => self.alphabet.num_edge_types() + 1,
        }
    }

    fn prior_id(&self, kind: TokenKind) -> ParamId {
        match kind {
            TokenKind::Node => self.node_prior,
            TokenKind::Edge => self.edge_prior,
        }
    }

    pub fn prior_logits(&self, kind: TokenKind) -> &[f64] {
        self.store.get(self.prior_id(kind)).data()
    }

    /// `log p_Z` of every latent category, untempered.
    pub fn log_prior(&self, kind: TokenKind) -> Vec<f64> {
        let logits = self.prior_logits(kind);
        let lse = log_sum_exp(logits);
        logits.iter().map(|l| l - lse).collect()
    }

    /// Sampling distribution of the latent: nodes ∝ exp(t·α), edges
    /// ∝ exp(β / t).
    pub fn sampling_probs(&self, kind: TokenKind, temperature: f64) -> Vec<f64> {
        let scaled: Vec<f64> = match kind {
            TokenKind::Node => self.prior_logits(kind).iter().map(|a| a * temperature).collect(),
            TokenKind::Edge => self.prior_logits(kind).iter().map(|b| b / temperature).collect(),
        };
        let lse = log_sum_exp(&scaled);
        scaled.iter().map(|s| (s - lse).exp()).collect()
    }

    pub fn sample_latent(&self, kind: TokenKind, temperature: f64, rng: &mut impl Rng) -> usize {
        let probs = self.sampling_probs(kind, temperature);
        WeightedIndex::new(&probs).expect("softmax weights are positive").sample(rng)
    }

    fn embed_union(&self, tape: &mut Tape<'_>, union: &StateUnion, mode: NormMode) -> (Var, Var, Var) {
        let x = tape.constant(union.features.clone());
        let nodes = self.rgcn.forward(tape, x, &union.operators);
        let normed = self.norm.forward(tape, nodes, union.segments.clone(), mode);
        let pooled = tape.segment_sum(normed, union.segments.clone());
        (pooled, nodes, normed)
    }

    /// Shift-head inputs and per-layer logits for every token of `batch`.
    fn shift_logits(&self, tape: &mut Tape<'_>, batch: &TokenBatch, mode: NormMode) -> Result<(Vec<Var>, Vec<Var>, Option<Var>)> {
        let states: Vec<&LabeledGraph> = batch.states.iter().collect();
        let union = StateUnion::new(&states, &self.alphabet);
        let (pooled, nodes, normed) = self.embed_union(tape, &union, mode);
        let mut node_logits = Vec::new();
        if !batch.node_states.is_empty() {
            let input = tape.gather(pooled, batch.node_states.clone());
            for head in &self.node_heads {
                node_logits.push(head.forward(tape, input)?);
            }
        }
        let mut edge_logits = Vec::new();
        if !batch.edge_queries.is_empty() {
            let g = tape.gather(pooled, batch.edge_queries.iter().map(|&(s, _, _)| s).collect());
            let hi = tape.gather(nodes, batch.edge_queries.iter().map(|&(s, i, _)| union.offsets[s] + i).collect());
            let hj = tape.gather(nodes, batch.edge_queries.iter().map(|&(s, _, j)| union.offsets[s] + j).collect());
            let input = tape.concat_cols(&[g, hi, hj]);
            for head in &self.edge_heads {
                edge_logits.push(head.forward(tape, input)?);
            }
        }
        let norm = (!union.features.is_empty()).then_some(normed);
        Ok((node_logits, edge_logits, norm))
    }

    /// Integer shifts `μ^1..μ^D` per node token and per edge token of `batch`.
    pub fn batch_shifts(&self, batch: &TokenBatch, mode: NormMode) -> Result<(Shifts, Shifts)> {
        let mut tape = Tape::new(&self.store);
        let (node_logits, edge_logits, _) = self.shift_logits(&mut tape, batch, mode)?;
        tape.check_finite()?;
        let collect = |logits: &[Var], rows: usize| -> Vec<Vec<usize>> {
            (0..rows).map(|r| logits.iter().map(|&l| tape.value(l).argmax_row(r)).collect()).collect()
        };
        Ok((collect(&node_logits, batch.node_tokens.len()), collect(&edge_logits, batch.edge_tokens.len())))
    }

    /// Latent of every token of every sequence, in sequence order.
    pub fn sequence_latents(&self, sequences: &[&GraphSequence]) -> Result<Vec<Vec<usize>>> {
        self.batch_latents(&TokenBatch::from_sequences(sequences, &self.alphabet)?)
    }

    /// Latents of a batch, per token run in token order.
    pub fn batch_latents(&self, batch: &TokenBatch) -> Result<Vec<Vec<usize>>> {
        let (node_shifts, edge_shifts) = self.batch_shifts(batch, NormMode::Eval)?;
        let (tk, te) = (self.categories(TokenKind::Node), self.categories(TokenKind::Edge));
        Ok(batch
            .slots
            .iter()
            .map(|slots| {
                slots
                    .iter()
                    .map(|&slot| match slot {
                        Slot::Node(n) => invert_shifts(batch.node_tokens[n], &node_shifts[n], tk),
                        Slot::Edge(e) => invert_shifts(batch.edge_tokens[e], &edge_shifts[e], te),
                    })
                    .collect()
            })
            .collect())
    }

    /// Exact `log p_Z(z)` of every token of a batch, per run in token order.
    pub fn batch_token_log_probs(&self, batch: &TokenBatch) -> Result<Vec<Vec<f64>>> {
        let latents = self.batch_latents(batch)?;
        let (lp_node, lp_edge) = (self.log_prior(TokenKind::Node), self.log_prior(TokenKind::Edge));
        Ok(batch
            .slots
            .iter()
            .zip(latents)
            .map(|(slots, zs)| {
                slots
                    .iter()
                    .zip(zs)
                    .map(|(slot, z)| match slot {
                        Slot::Node(_) => lp_node[z],
                        Slot::Edge(_) => lp_edge[z],
                    })
                    .collect()
            })
            .collect())
    }

    /// Per-token `log p_Z(z)` of each sequence, in sequence order.
    pub fn sequence_token_log_probs(&self, sequences: &[&GraphSequence]) -> Result<Vec<Vec<f64>>> {
        self.batch_token_log_probs(&TokenBatch::from_sequences(sequences, &self.alphabet)?)
    }

    /// Exact log-probability of generating `seq` token by token, with
    /// inference-mode normalization.
    pub fn sequence_log_prob(&self, seq: &GraphSequence) -> Result<f64> {
        Ok(self.sequence_token_log_probs(&[seq])?[0].iter().sum())
    }

    /// `Σ log p_Z` over the latents of `g`'s BFS-ordered sequence.
    pub fn log_likelihood(&self, g: &LabeledGraph) -> Result<f64> {
        self.alphabet.validate(g)?;
        let seq = to_sequence(g, &g.bfs_order()?, self.alphabet.no_edge())?;
        self.sequence_log_prob(&seq)
    }

    /// Log-likelihoods of many graphs in one batched pass.
    pub fn log_likelihoods(&self, graphs: &[&LabeledGraph]) -> Result<Vec<f64>> {
        let seqs = graphs
            .iter()
            .map(|g| {
                self.alphabet.validate(g)?;
                to_sequence(g, &g.bfs_order()?, self.alphabet.no_edge())
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&GraphSequence> = seqs.iter().collect();
        Ok(self.sequence_token_log_probs(&refs)?.into_iter().map(|lps| lps.iter().sum()).collect())
    }

    /// Records differentiable per-token log-probabilities of `batch` on `tape`.
    pub fn token_log_probs(
        &self,
        tape: &mut Tape<'_>,
        batch: &TokenBatch,
        norm: NormMode,
        grad: GradientMode,
    ) -> Result<TokenLogProbs> {
        let (node_logits, edge_logits, norm_var) = self.shift_logits(tape, batch, norm)?;
        let tau = self.config.st_temperature;
        let column = |tape: &mut Tape<'_>, logits: &[Var], tokens: &[usize], kind: TokenKind| -> Option<Var> {
            if tokens.is_empty() {
                return None;
            }
            let mut z = tape.constant(Tensor::one_hot(tokens, self.categories(kind)));
            for &l in logits.iter().rev() {
                let m = match grad {
                    GradientMode::StraightThrough => tape.straight_through(l, tau),
                    GradientMode::FullySoft => tape.softmax(l, tau),
                };
                z = tape.cyclic_shift(z, m, ShiftDir::Inverse);
            }
            let prior = tape.param(self.prior_id(kind));
            let log_prior = tape.log_softmax(prior);
            Some(tape.row_dot(z, log_prior))
        };
        let node = column(tape, &node_logits, &batch.node_tokens, TokenKind::Node);
        let edge = column(tape, &edge_logits, &batch.edge_tokens, TokenKind::Edge);
        Ok(TokenLogProbs { node, edge, norm: norm_var })
    }

    /// Negative log-likelihood surrogate `−scale · Σ log p` over the BFS
    /// sequences of `graphs`, with per-state batch statistics, and its
    /// gradients.
    pub fn surrogate_loss(&self, graphs: &[&LabeledGraph], scale: f64, grad: GradientMode) -> Result<SurrogateOutput> {
        let seqs = graphs
            .iter()
            .map(|g| {
                self.alphabet.validate(g)?;
                to_sequence(g, &g.bfs_order()?, self.alphabet.no_edge())
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&GraphSequence> = seqs.iter().collect();
        let batch = TokenBatch::from_sequences(&refs, &self.alphabet)?;
        let mut tape = Tape::new(&self.store);
        let lps = self.token_log_probs(&mut tape, &batch, NormMode::Train, grad)?;
        let total = match (lps.node, lps.edge) {
            (Some(n), Some(e)) => {
                let (sn, se) = (tape.sum(n), tape.sum(e));
                tape.add(sn, se)
            }
            (Some(n), None) => tape.sum(n),
            (None, Some(e)) => tape.sum(e),
            (None, None) => tape.constant(Tensor::scalar(0.0)),
        };
        let loss = tape.scale(total, -scale);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("surrogate loss"));
        }
        let norm_stats = lps
            .norm
            .and_then(|v| tape.batch_norm_stats(v))
            .filter(|(_, _, used)| *used > 0)
            .map(|(mean, var, states)| NormStats { mean, var, states });
        let grads = tape.backward(loss)?;
        Ok(SurrogateOutput { loss: value, grads, norm_stats })
    }

    /// Folds one step's batch statistics into the running estimates.
    pub fn update_norm_stats(&mut self, stats: &NormStats) {
        self.norm.update_running(&mut self.store, &stats.mean, &stats.var);
    }

    /// Inference-mode embedding of a single state.
    pub fn embed(&self, g: &LabeledGraph) -> Result<Embedding> {
        self.alphabet.validate(g)?;
        let union = StateUnion::new(&[g], &self.alphabet);
        let mut tape = Tape::new(&self.store);
        let (pooled, nodes, _) = self.embed_union(&mut tape, &union, NormMode::Eval);
        tape.check_finite()?;
        Ok(Embedding { graph: tape.value(pooled).clone(), nodes: tape.value(nodes).clone() })
    }

    /// `μ^1..μ^D` for the next node given an embedded state.
    pub fn node_shifts(&self, emb: &Embedding) -> Result<Vec<usize>> {
        let mut tape = Tape::new(&self.store);
        let input = tape.constant(emb.graph.clone());
        self.head_argmax(&mut tape, input, &self.node_heads)
    }

    /// `μ^1..μ^D` for the edge between the newest node `i` and `j < i`.
    pub fn edge_shifts(&self, emb: &Embedding, i: usize, j: usize) -> Result<Vec<usize>> {
        let n = emb.nodes.rows();
        if !(j < i && i < n) {
            return Err(Error::Invalid(format!("edge focus ({i}, {j}) needs j < i < {n}")));
        }
        let mut row = emb.graph.data().to_vec();
        row.extend_from_slice(emb.nodes.row(i));
        row.extend_from_slice(emb.nodes.row(j));
        let mut tape = Tape::new(&self.store);
        let input = tape.constant(Tensor::row_vector(row));
        self.head_argmax(&mut tape, input, &self.edge_heads)
    }

    fn head_argmax(&self, tape: &mut Tape<'_>, input: Var, heads: &[Mlp]) -> Result<Vec<usize>> {
        let mut shifts = Vec::with_capacity(heads.len());
        for head in heads {
            let logits = head.forward(tape, input)?;
            shifts.push(tape.value(logits).argmax_row(0));
        }
        tape.check_finite()?;
        Ok(shifts)
    }

    pub fn shifts(&self, cond: Conditioning<'_>) -> Result<Vec<usize>> {
        match cond {
            Conditioning::Node(g) => self.node_shifts(&self.embed(g)?),
            Conditioning::Edge { graph, i, j } => self.edge_shifts(&self.embed(graph)?, i, j),
        }
    }

    fn kind_of(cond: &Conditioning<'_>) -> TokenKind {
        match cond {
            Conditioning::Node(_) => TokenKind::Node,
            Conditioning::Edge { .. } => TokenKind::Edge,
        }
    }

    /// Latent → token through every layer.
    pub fn forward_token(&self, z: usize, cond: Conditioning<'_>) -> Result<usize> {
        let t = self.categories(Self::kind_of(&cond));
        if z >= t {
            return Err(Error::Invalid(format!("latent {z} outside [0, {t})")));
        }
        Ok(apply_shifts(z, &self.shifts(cond)?, t))
    }

    /// Token → latent; exact inverse of [`Self::forward_token`].
    pub fn inverse_token(&self, token: usize, cond: Conditioning<'_>) -> Result<usize> {
        let t = self.categories(Self::kind_of(&cond));
        if token >= t {
            return Err(Error::Invalid(format!("token {token} outside [0, {t})")));
        }
        Ok(invert_shifts(token, &self.shifts(cond)?, t))
    }

    /// Parameters and buffers, with the architecture in metadata.
    pub fn to_checkpoint(&self, include_optimizer: bool) -> Checkpoint {
        let mut ckpt = self.store.to_checkpoint(include_optimizer);
        let a = &self.alphabet;
        let m = &mut ckpt.metadata;
        m.insert("alphabet.name".into(), a.name().to_string());
        m.insert("alphabet.nodes".into(), a.node_symbols().join(","));
        m.insert("alphabet.edges".into(), a.edge_symbols().join(","));
        m.insert(
            "alphabet.valence".into(),
            a.valence_table().map_or("none".into(), |t| t.iter().map(u32::to_string).collect::<Vec<_>>().join(",")),
        );
        m.insert("flow.depth".into(), self.config.depth.to_string());
        m.insert("flow.rgcn_layers".into(), self.config.rgcn_layers.to_string());
        m.insert("flow.embed_width".into(), self.config.embed_width.to_string());
        m.insert("flow.mlp_hidden".into(), self.config.mlp_hidden.to_string());
        m.insert("flow.st_temperature".into(), self.config.st_temperature.to_string());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |key: &str| {
            ckpt.metadata.get(key).map(String::as_str).ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::Checkpoint(format!("metadata `{key}` is not an integer")))
        };
        let split = |s: &str| s.split(',').map(str::to_string).collect::<Vec<_>>();
        let valence = match get("alphabet.valence")? {
            "none" => None,
            s => Some(
                s.split(',')
                    .map(|v| v.parse().map_err(|_| Error::Checkpoint(format!("bad valence entry `{v}`"))))
                    .collect::<Result<Vec<u32>>>()?,
            ),
        };
        let alphabet =
            Alphabet::new(get("alphabet.name")?, split(get("alphabet.nodes")?), split(get("alphabet.edges")?), valence)?;
        let config = FlowConfig {
            depth: num("flow.depth")?,
            rgcn_layers: num("flow.rgcn_layers")?,
            embed_width: num("flow.embed_width")?,
            mlp_hidden: num("flow.mlp_hidden")?,
            st_temperature: get("flow.st_temperature")?
                .parse()
                .map_err(|_| Error::Checkpoint("metadata `flow.st_temperature` is not a number".into()))?,
        };
        let mut model = Self::new(alphabet, config, 0)?;
        model.store.load_checkpoint(ckpt)?;
        Ok(model)
    }
}

/// `(z + Σ μ) mod t`, applying layer 1 first.
pub fn apply_shifts(z: usize, shifts: &[usize], t: usize) -> usize {
    shifts.iter().fold(z, |acc, &mu| (acc + mu) % t)
}

/// `(a − Σ μ) mod t`, undoing layer D first.
pub fn invert_shifts(a: usize, shifts: &[usize], t: usize) -> usize {
    shifts.iter().rev().fold(a, |acc, &mu| (acc + t - mu % t) % t)
}
