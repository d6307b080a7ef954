//! Gated bidirectional alignment network (GBAN) for speech+text emotion
//! classification, built from first principles.
//!
//! The crate provides:
//! - a tape-based reverse-mode autodiff engine over dense f64 tensors
//!   ([`tape`]),
//! - acoustic feature extraction (log-mel, MFCC, deltas) ([`features`]),
//! - pretrained word-vector loading and tokenization ([`text`]),
//! - CNN-BiLSTM encoders for both modalities ([`encoders`]),
//! - the bidirectional attention alignment ([`alignment`]) and group
//!   gated fusion ([`fusion`]) layers,
//! - training, evaluation and cross-validation ([`train`]), and
//! - synthetic dataset generation plus a finite-difference gradient
//!   check suite ([`synth`], [`gradcheck`]).

pub mod alignment;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod features;
pub mod fusion;
pub mod gradcheck;
pub mod manifest;
pub mod model;
pub mod params;
pub mod synth;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use params::{Param, ParamId, ParamStore};
pub use rng::SeededRng;
pub use tape::{Activation, Tape, TensorRef};
pub use tensor::Tensor;
