//! Differentially private prototype learning over embedding vectors.
//!
//! Two families of private per-class prototypes: noisy clipped means
//! (Gaussian mechanism, direct or iterative) and public-candidate selection
//! (exponential mechanism, single or top-K), with zCDP / pure-DP accounting,
//! long-tail dataset construction, prototype classification, and evaluation
//! utilities. All randomness is deterministic given a seed and stream.

pub mod classify;
pub mod data;
pub mod error;
pub mod eval;
pub mod mean;
pub mod mechanisms;
pub mod privacy;
pub mod prototype;
pub mod rng;
pub mod select;

pub use error::{Error, Result};
