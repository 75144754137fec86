//! Temporal aggregation of asynchronous audio-visual segments for emotion
//! classification, on top of a small CPU autodiff engine.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod cli;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
