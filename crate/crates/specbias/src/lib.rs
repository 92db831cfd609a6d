//! Desk-scale laboratory for mitigating spectral bias in convolutional
//! neural operators via latent-space high-frequency scaling.
//!
//! The crate bundles a minimal reverse-mode tensor engine, a configurable
//! ResUNet operator with learnable DC/HFC scaling modules, a pseudo-spectral
//! Kolmogorov-flow data generator, a spectral metric suite, and the training
//! and analysis machinery that ties them together. The `specbias` binary
//! exposes all of it on the command line.

pub mod effectiveness;
pub mod fft;
pub mod hfs;
pub mod io;
pub mod metrics;
pub mod model;
pub mod solver;
pub mod tensor;
pub mod train;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
