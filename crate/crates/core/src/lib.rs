//! Perception-informed latent representations of head-related transfer functions.

pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod inr;
pub mod metrics;
pub mod mmds;
pub mod pipeline;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
