//! Desk-scale building blocks for LLM-guided remote photoplethysmography:
//! dual-domain signal stationarization, multi-scale visual token fusion,
//! text-prototype reprogramming, physiological cue prompts and a small
//! trainable end-to-end model, all on a self-contained autodiff core.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below pin the `f64` instantiation used by the CLI and the tests.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tape ops return `Result` for shape errors, so they cannot be operator traits.
#![allow(clippy::should_implement_trait)]

mod error;
pub mod aggregator;
pub mod attention;
pub mod cue;
pub mod dds;
pub mod numcore;
pub mod pipeline;
#[cfg(test)]
mod oracle;
pub mod rng;
pub mod signal;
pub mod tpg;
mod scalar;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numcore::Tensor<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type ParamStore64 = numcore::ParamStore<f64>;
pub type ParamStore32 = numcore::ParamStore<f32>;
pub type Tape64 = numcore::Tape<f64>;
