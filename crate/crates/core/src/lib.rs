//! Arbitrary style transfer with frequency-decomposed (octave) features.
//!
//! Content and style images are encoded into high- and low-frequency
//! branches; per-frequency kernel predictors turn the style code into
//! depthwise-separable kernels that the generator applies to the content
//! features.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod extractor;
pub mod freq_ops;
pub mod generator;
pub mod inference;
pub mod kernel_prediction;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod training;

pub use aesfa_tensor as tensor;
pub use config::{Frequency, ModelConfig};
pub use error::{Error, Result};
pub use model::{EncoderKind, StyleModel};
