//! Minimal dense-tensor neural network stack with exact backward passes.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod optim;
mod params;
mod tensor;

use thiserror::Error;

pub use graph::{log_sum_exp, sigmoid, Graph, NormStats, Var};
pub use layers::{BatchNorm1d, BiGru, Conv2d, GruCell, Linear};
pub use optim::{sgd_step, Optimizer, OptimizerKind, SgdSchedule};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::{argmax, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("{0}")]
    NonFinite(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seeded generator used for initialization, dropout, and shuffling.
pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
