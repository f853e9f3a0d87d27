//! Crate-wide error type.

use crate::paths::{LossCurve, Path};
use crate::tensor::Tensor;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid shape {shape:?} for data of length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("layer {index} ({kind}): {msg}")]
    LayerConfig {
        index: usize,
        kind: &'static str,
        msg: String,
    },

    #[error("invalid config: field `{field}`: {msg}")]
    InvalidConfig { field: &'static str, msg: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("class {class} has no usable examples")]
    MissingClass { class: usize },

    #[error("class {class}: found {got} candidates, need {need}")]
    InsufficientExamples {
        class: usize,
        got: usize,
        need: usize,
    },

    #[error("expected an image-shaped tensor (channels, height, width), got {got:?}")]
    NonImageShape { got: Vec<usize> },

    #[error("degenerate chord: endpoints A and C coincide")]
    DegenerateChord,

    #[error("optimization diverged at iteration {iter}: objective is not finite")]
    OptimizationDiverged { iter: usize },

    #[error(
        "endpoint loss {loss:.6e} exceeds delta {delta:.6e}: endpoints of `connect` must be modes"
    )]
    EndpointNotMode { loss: f64, delta: f64 },

    #[error("not connected within depth {depth}: max sampled loss {max_loss:.6e} > delta {delta:.6e}")]
    NotConnected {
        depth: usize,
        max_loss: f64,
        delta: f64,
        best: Box<(Path, LossCurve)>,
    },

    #[error("loss threshold {threshold:.6e} not reached: best loss {best_loss:.6e} after {iters} iterations")]
    ThresholdNotReached {
        threshold: f64,
        best_loss: f64,
        iters: usize,
        best: Box<Tensor>,
    },

    #[error("power iteration did not converge within {0} iterations")]
    PowerIterationDiverged(usize),

    #[error("lattice of {sites} sites exceeds the configured limit {limit}")]
    LatticeTooLarge { sites: u128, limit: u128 },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
