//! Multi-view zero-shot image classification: data formats, the model,
//! training and evaluation.

pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
