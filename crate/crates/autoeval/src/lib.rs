//! Unsupervised accuracy estimation from classifier logit matrices.
//!
//! The library computes energy-based dataset measures (centered on the
//! meta-distribution energy statistic) together with a family of
//! confidence/agreement/transport baselines, fits the linear AutoEval
//! regression that maps a measure to accuracy, and ships a small
//! synthetic classification laboratory with controllable distribution
//! shift for end-to-end validation.

pub mod data_model;
pub mod error;
pub mod linalg;
pub mod measures;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod synth_lab;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
