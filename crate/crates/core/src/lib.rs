//! Saliency-guided dynamic vision transformer tracker: network, toy
//! training, tracking loop, synthetic data and evaluation metrics.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod crop;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod heads;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sequence;
pub mod sft;
pub mod synth;
pub mod tracker;
pub mod train;

pub use error::{CoreError, Result};
