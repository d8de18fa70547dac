//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by model construction, data generation, and training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A network was declared with fewer than two layer dimensions, or a
    /// dimension was zero.
    InvalidArchitecture(String),
    /// An input's shape does not match what the operation expects.
    ShapeMismatch { expected: usize, got: usize },
    /// A forward cache was paired with a model or gradient it did not
    /// come from.
    CacheMismatch,
    /// A state or gradient stopped being finite.
    NonFinite(&'static str),
    /// Rejection sampling exceeded its resample cap.
    SamplingCapExceeded,
    /// A configuration value is inconsistent with the data it is applied to.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArchitecture(msg) => write!(f, "invalid architecture: {msg}"),
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            Error::CacheMismatch => write!(f, "forward cache does not match this call"),
            Error::NonFinite(ctx) => write!(f, "non-finite value in {ctx}"),
            Error::SamplingCapExceeded => write!(f, "rejection sampling exceeded resample cap"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
