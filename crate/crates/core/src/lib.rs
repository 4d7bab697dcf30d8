//! Discrete normalizing flow for labeled graphs.
//!
//! Graphs are serialized into BFS-ordered node/edge decisions. Each decision
//! is the image of an integer latent under a stack of modulo shifts whose
//! offsets are predicted from an R-GCN embedding of the graph built so far,
//! which gives exact likelihoods with no Jacobian term.
//!
//! - [`flow`]: the model with its exact likelihood and training surrogate.
//! - [`sampler`]: autoregressive generation with valency correction.
//! - [`train`], [`rl`]: maximum likelihood and PPO fine-tuning.
//! - [`eval`]: molecule metrics and graph-statistic MMD.
//! - [`chem`], [`graph`], [`data`]: representations and I/O.
//! - [`nn`]: the small reverse-mode tensor engine everything runs on.

pub mod chem;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod graph;
pub mod nn;
pub mod rl;
pub mod sampler;
pub mod train;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use flow::{DiscreteFlowModel, FlowConfig, GradientMode, TokenKind};
pub use graph::{Alphabet, GraphSequence, LabeledGraph, Token};
pub use rl::{PpoConfig, RewardSpec};
pub use sampler::{Episode, SampleConfig, Termination};
pub use train::TrainConfig;
