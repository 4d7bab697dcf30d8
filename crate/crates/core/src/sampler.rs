//! Autoregressive generation: sample a latent per decision, push it through
//! the flow, resample edges that would break valency, stop when a new node
//! fails to connect.

use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chem::check_edge_addition;
use crate::error::{Error, Result};
use crate::flow::{apply_shifts, invert_shifts, DiscreteFlowModel, Embedding, TokenKind};
use crate::graph::{from_sequence, to_sequence, GraphSequence, LabeledGraph, Token};

#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    pub max_nodes: usize,
    /// Node prior sharpness: probabilities ∝ exp(t · α).
    pub node_temperature: f64,
    /// Edge prior temperature: probabilities ∝ exp(β / t).
    pub edge_temperature: f64,
    /// Draws per edge before falling back to no-edge.
    pub resample_cap: usize,
    /// When false, the first valency-breaking edge is kept and generation
    /// stops; used to measure validity without correction.
    pub valency_check: bool,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { max_nodes: 9, node_temperature: 0.35, edge_temperature: 0.23, resample_cap: 100, valency_check: true, seed: 0 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_nodes == 0 {
            return Err(Error::Invalid("max_nodes must be >= 1".into()));
        }
        for (name, t) in [("node_temperature", self.node_temperature), ("edge_temperature", self.edge_temperature)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {t}")));
            }
        }
        if self.resample_cap == 0 {
            return Err(Error::Invalid("resample_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// The newest node got no edge and was removed.
    Disconnect,
    MaxNodes,
    /// A valency-breaking edge was emitted with the check disabled.
    ValencyViolation,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Disconnect => "disconnect",
            Self::MaxNodes => "max_nodes",
            Self::ValencyViolation => "valency_violation",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    /// Hash of the sub-graph the action was conditioned on.
    pub state_hash: u64,
    pub token: Token,
    /// The latent behind the token.
    pub latent: usize,
    /// Untempered `log p_Z(latent)`.
    pub log_prob: f64,
    /// Rejected draws before this action was accepted.
    pub resamples: usize,
    /// The cap ran out and no-edge was imposed.
    pub forced: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub graph: LabeledGraph,
    pub steps: Vec<Step>,
    pub termination: Termination,
    /// Nodes the episode started from (0 for unconditional generation).
    pub initial_nodes: usize,
}

impl Episode {
    pub fn log_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.log_prob).sum()
    }

    /// Every emitted token, including those of a removed final node.
    pub fn sequence(&self, no_edge: usize) -> GraphSequence {
        GraphSequence::new(self.steps.iter().map(|s| s.token).collect(), no_edge)
    }

    pub fn total_resamples(&self) -> usize {
        self.steps.iter().map(|s| s.resamples).sum()
    }

    pub fn forced_edges(&self) -> usize {
        self.steps.iter().filter(|s| s.forced).count()
    }

    /// Rebuilds the result from `start` and the recorded actions.
    pub fn replay(&self, start: &LabeledGraph, no_edge: usize) -> Result<LabeledGraph> {
        let mut g = start.clone();
        let mut fresh = None;
        for s in &self.steps {
            match s.token {
                Token::Node(t) => fresh = Some(g.add_node(t)),
                Token::Edge { i, j, ty } if ty != no_edge => g.add_edge(i, j, ty)?,
                Token::Edge { .. } => {}
            }
        }
        if self.termination == Termination::Disconnect && fresh.is_some() {
            g.pop_node();
        }
        Ok(g)
    }
}

/// Order-sensitive FNV-1a hash of node types and edges.
pub fn state_hash(g: &LabeledGraph) -> u64 {
    struct Fnv(u64);
    impl Hasher for Fnv {
        fn finish(&self) -> u64 {
            self.0
        }
        fn write(&mut self, bytes: &[u8]) {
            for b in bytes {
                self.0 ^= u64::from(*b);
                self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    let mut h = Fnv(0xcbf2_9ce4_8422_2325);
    h.write_usize(g.num_nodes());
    for &t in g.node_types() {
        h.write_usize(t);
    }
    for (i, j, t) in g.edges() {
        h.write_usize(i);
        h.write_usize(j);
        h.write_usize(t);
    }
    h.finish()
}

/// One episode from the empty graph.
pub fn generate(model: &DiscreteFlowModel, config: &SampleConfig, rng: &mut ChaCha8Rng) -> Result<Episode> {
    generate_from(model, config, &LabeledGraph::new(), rng)
}

/// Continues generation from `start`, adding nodes until `max_nodes` or a
/// disconnected node.
pub fn generate_from(
    model: &DiscreteFlowModel,
    config: &SampleConfig,
    start: &LabeledGraph,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    config.validate()?;
    let alphabet = model.alphabet();
    alphabet.validate(start)?;
    let no_edge = alphabet.no_edge();
    let (t_node, t_edge) = (model.categories(TokenKind::Node), model.categories(TokenKind::Edge));
    let (lp_node, lp_edge) = (model.log_prior(TokenKind::Node), model.log_prior(TokenKind::Edge));
    let mut g = start.clone();
    let mut steps = Vec::new();
    let initial_nodes = g.num_nodes();

    for i in initial_nodes..config.max_nodes.max(initial_nodes) {
        let shifts = model.node_shifts(&model.embed(&g)?)?;
        let z = model.sample_latent(TokenKind::Node, config.node_temperature, rng);
        let t = apply_shifts(z, &shifts, t_node);
        steps.push(Step {
            state_hash: state_hash(&g),
            token: Token::Node(t),
            latent: z,
            log_prob: lp_node[z],
            resamples: 0,
            forced: false,
        });
        g.add_node(t);

        let mut emb: Option<Embedding> = None;
        let mut connected = false;
        for j in 0..i {
            let state = match &emb {
                Some(e) => e,
                None => emb.insert(model.embed(&g)?),
            };
            let shifts = model.edge_shifts(state, i, j)?;
            let mut resamples = 0;
            let (z, b, forced) = loop {
                let draw = model.sample_latent(TokenKind::Edge, config.edge_temperature, rng);
                let token = apply_shifts(draw, &shifts, t_edge);
                if !config.valency_check || check_edge_addition(alphabet, &g, i, j, token)? {
                    break (draw, token, false);
                }
                resamples += 1;
                if resamples >= config.resample_cap {
                    break (invert_shifts(no_edge, &shifts, t_edge), no_edge, true);
                }
            };
            steps.push(Step {
                state_hash: state_hash(&g),
                token: Token::Edge { i, j, ty: b },
                latent: z,
                log_prob: lp_edge[z],
                resamples,
                forced,
            });
            if b != no_edge {
                let legal = check_edge_addition(alphabet, &g, i, j, b)?;
                g.add_edge(i, j, b)?;
                emb = None;
                connected = true;
                if !legal {
                    return Ok(Episode { graph: g, steps, termination: Termination::ValencyViolation, initial_nodes });
                }
            }
        }
        if i > 0 && !connected {
            g.pop_node();
            return Ok(Episode { graph: g, steps, termination: Termination::Disconnect, initial_nodes });
        }
    }
    Ok(Episode { graph: g, steps, termination: Termination::MaxNodes, initial_nodes })
}

/// Generator of episode `index` under `seed`: one ChaCha stream per episode.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `count` independent episodes, deterministic in `config.seed` regardless
/// of thread count.
pub fn generate_batch(model: &DiscreteFlowModel, config: &SampleConfig, count: usize) -> Result<Vec<Episode>> {
    config.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|index| generate(model, config, &mut episode_rng(config.seed, index)))
        .collect()
}

/// Per-token log-probabilities of `seq` computed one state at a time, the
/// way a sampler forced to emit `seq` would record them.
pub fn forced_replay(model: &DiscreteFlowModel, seq: &GraphSequence) -> Result<Vec<f64>> {
    let alphabet = model.alphabet();
    if seq.no_edge() != alphabet.no_edge() {
        return Err(Error::Invalid("sequence no-edge index does not match the model".into()));
    }
    alphabet.validate(&from_sequence(seq)?)?;
    let (t_node, t_edge) = (model.categories(TokenKind::Node), model.categories(TokenKind::Edge));
    let (lp_node, lp_edge) = (model.log_prior(TokenKind::Node), model.log_prior(TokenKind::Edge));
    let mut g = LabeledGraph::new();
    let mut emb: Option<Embedding> = None;
    let mut out = Vec::with_capacity(seq.len());
    for &token in seq.tokens() {
        let state = match &emb {
            Some(e) => e,
            None => emb.insert(model.embed(&g)?),
        };
        match token {
            Token::Node(t) => {
                out.push(lp_node[invert_shifts(t, &model.node_shifts(state)?, t_node)]);
                g.add_node(t);
                emb = None;
            }
            Token::Edge { i, j, ty } => {
                out.push(lp_edge[invert_shifts(ty, &model.edge_shifts(state, i, j)?, t_edge)]);
                if ty != seq.no_edge() {
                    g.add_edge(i, j, ty)?;
                    emb = None;
                }
            }
        }
    }
    Ok(out)
}

/// Decodes `latents` through the flow, one per token slot of `layout`, with
/// conditioning taken from the graph rebuilt so far.
pub fn decode_latents(model: &DiscreteFlowModel, layout: &GraphSequence, latents: &[usize]) -> Result<LabeledGraph> {
    if layout.len() != latents.len() {
        return Err(Error::Invalid(format!("{} latents for {} tokens", latents.len(), layout.len())));
    }
    let (t_node, t_edge) = (model.categories(TokenKind::Node), model.categories(TokenKind::Edge));
    let no_edge = model.alphabet().no_edge();
    let mut g = LabeledGraph::new();
    let mut emb: Option<Embedding> = None;
    for (&token, &z) in layout.tokens().iter().zip(latents) {
        let state = match &emb {
            Some(e) => e,
            None => emb.insert(model.embed(&g)?),
        };
        match token {
            Token::Node(_) => {
                let t = apply_shifts(z % t_node, &model.node_shifts(state)?, t_node);
                g.add_node(t);
                emb = None;
            }
            Token::Edge { i, j, .. } => {
                let b = apply_shifts(z % t_edge, &model.edge_shifts(state, i, j)?, t_edge);
                if b != no_edge {
                    g.add_edge(i, j, b)?;
                    emb = None;
                }
            }
        }
    }
    Ok(g)
}

/// Inverts every token of `g`'s BFS sequence, decodes the latents again and
/// checks the same graph comes back.
pub fn reconstruct(model: &DiscreteFlowModel, g: &LabeledGraph) -> Result<bool> {
    let canon = g.bfs_canonical()?;
    let seq = to_sequence(&canon, &(0..canon.num_nodes()).collect::<Vec<_>>(), model.alphabet().no_edge())?;
    let latents = model.sequence_latents(&[&seq])?.remove(0);
    Ok(decode_latents(model, &seq, &latents)? == canon)
}
