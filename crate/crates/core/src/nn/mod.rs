//! Dense `f64` tensors, a reverse-mode tape, layers, Adam, and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{AdamState, Checkpoint};
pub use layers::{node_features, relation_operators, BatchNorm, Linear, Mlp, NormMode, Rgcn};
pub use params::{AdamConfig, BufferId, Gradients, ParamId, ParamStore};
pub use tape::{log_sum_exp, softmax_rows, Segments, ShiftDir, Tape, Var};
pub use tensor::{SparseMatrix, Tensor};
