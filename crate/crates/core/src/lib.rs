//! Streaming seizure detection with unsupervised online learning.
//!
//! Per-sample line-length and band-power features feed a logistic
//! regression whose weights keep adapting after deployment: runs of
//! high-confidence predictions are used as their own labels for single
//! SGD steps. Every stage runs in `f64` or in Q6.10 fixed point.

pub mod arith;
pub mod classifier;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixedpoint;
pub mod online;
pub mod pipeline;
pub mod train;

pub use arith::{ArithMode, Scalar};
pub use error::{Error, Result};
pub use fixedpoint::{Wide, Q6_10};
