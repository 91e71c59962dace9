//! Deep knowledge tracing with prediction-consistent regularization.
//!
//! The crate provides an LSTM knowledge-tracing model trained with an
//! augmented loss that adds a reconstruction term and two waviness terms to
//! the usual next-step cross-entropy, together with the evaluation measures
//! for each of those properties, a synthetic IRT student simulator and the
//! training / cross-validation harness.

pub mod data;
pub mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod train;

pub use error::{DktError, Result};
