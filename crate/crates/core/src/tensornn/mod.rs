//! Minimal dense numerical core.
//!
//! A pre-norm decoder-only transformer over row-major `ndarray` matrices with a
//! hand-written backward pass. All learnable arrays live in one flat buffer
//! ([`Params`]) described by a [`ParamLayout`], so gradients, optimizer moments
//! and checkpoints share a single representation. Everything is generic over
//! [`Scalar`]: training runs in `f32`, gradient checking in `f64`.

mod checkpoint;
mod gradcheck;
mod infer;
mod loss;
mod optim;
mod params;
mod transformer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader};
pub use gradcheck::{grad_check, transformer_grad_check, GradCheckReport};
pub use infer::InferenceSession;
pub use loss::{masked_cross_entropy, masked_cross_entropy_grad, softmax_row};
pub use optim::{AdamW, AdamWConfig, InverseSqrt};
pub use params::{ParamEntry, ParamId, ParamLayout, Params};
pub use transformer::{Batch, ForwardCache, HeadGrad, Lookups, ModelConfig, Segment, Transformer};

use ndarray::NdFloat;

/// Floating-point element type of parameters and activations.
pub trait Scalar: NdFloat + num_traits::Float + Default {
    const DTYPE: &'static str;
    const BYTES: usize;

    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
