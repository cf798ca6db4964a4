//! Interleaved phoneme/acoustic codec language modeling.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: synthetic aligned corpus (phonemes, durations, multi-layer
//!   codes, speakers) plus exact oracle decoders.
//! - [`seqbuild`]: hybrid sequence construction, local advance, attention and
//!   loss masks, prompts.
//! - [`tensornn`]: dense decoder-only transformer with manual backward pass,
//!   AdamW, inverse-sqrt schedule and finite-difference gradient checking.
//! - [`models`]: GAR and NAR model assembly and training loops.
//! - [`decode`]: the constrained GAR inference state machine and NAR completion.
//! - [`eval`]: edit-distance metrics and experiment drivers.

pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod models;
pub mod rng;
pub mod seqbuild;
pub mod tensornn;
pub mod util;

pub use error::{Error, Result};
