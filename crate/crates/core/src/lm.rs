//! Toy decoder-only transformer with exact backpropagation.
//!
//! Pre-norm blocks (RMSNorm, causal multi-head attention, GELU MLP),
//! sinusoidal positional encodings (the one fixed positional scheme used
//! throughout), optionally tied input/output embeddings, AdamW with global
//! gradient-norm clipping, and a warmup + cosine learning-rate schedule.
//!
//! Everything is generic over [`Scalar`] (f32 or f64). Training runs in f32;
//! the f64 instantiation backs the finite-difference gradient oracle. All
//! computation is single-threaded with a fixed accumulation order, so a run
//! is bit-reproducible and resumable.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use thiserror::Error;

mod checkpoint;
mod config;
mod curve;
mod model;
mod optim;
mod params;
mod sample;

pub use checkpoint::{init_random, init_twist, load_checkpoint, save_checkpoint, Checkpoint, Provenance};
pub use config::{count_params, lr_at, ModelConfig, TrainConfig};
pub use curve::{smoothed_nonincreasing_fraction, LossCurve, LossPoint, Scope, Split};
pub use model::{eval_loss, mean_row_loss, sequence_logits, train_step, EvalResult, StepStats};
pub use optim::AdamState;
pub use params::{BlockParams, Params};
pub use sample::{generate, score_loglik, DecodeState, SampleConfig};

/// Floating-point element type the model runs on.
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const BYTES: usize;
    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step} (lr {lr:.3e}): {loss}")]
    NonFiniteLoss { step: u64, lr: f64, loss: f64 },
    #[error("batch does not match model: {0}")]
    BatchMismatch(String),
    #[error("token id {0} out of vocab range {1}")]
    TokenOutOfRange(u32, usize),
    #[error("score range {start}..{end} invalid for sequence of {len} (must lie in 1..=len)")]
    BadScoreRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("sequence length {0} exceeds context {1}")]
    TooLong(usize, usize),
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("vocab range mismatch: {0}")]
    VocabMismatch(String),
    #[error("checkpoint file malformed: {0}")]
    BadCheckpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
