use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid alphabet: {0}")]
    Alphabet(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("graph is disconnected; unreachable nodes {unreachable:?}")]
    Disconnected { unreachable: Vec<usize> },

    #[error("malformed sequence at token {position}: {reason}")]
    Sequence { position: usize, reason: String },

    #[error("edge ({i}, {j}) already present")]
    EdgeExists { i: usize, j: usize },

    #[error("smiles error at byte {offset}: {reason}")]
    Smiles { offset: usize, reason: String },

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward called on a consumed trace")]
    TraceConsumed,

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("scorer error: {reason} (reply: {raw:?})")]
    Scorer { reason: String, raw: String },

    #[error("zero old-policy probability at step {0}")]
    ZeroOldProbability(usize),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
