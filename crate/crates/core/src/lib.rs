//! Disentangled neural audio codec.
//!
//! A convolutional encoder maps a waveform to a frame sequence `Y`. Two learned
//! projections split `Y` into a speech part `S` and a background part `N`, each
//! quantized by its own residual vector quantizer. The decoder consumes the sum of the
//! two quantized streams, so speech and background tokens can be recombined freely.

pub mod codec;
pub mod error;
pub mod numerics;
pub mod rvq;
pub mod signal;
pub mod sop;
pub mod tasks;
pub mod training;

pub use codec::{Codec, ModelConfig, TokenBundle};
pub use error::{Error, Result};
pub use numerics::{Graph, ParamStore, Tensor, Var};
pub use signal::Waveform;
