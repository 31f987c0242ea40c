//! Closed-form kernel debiasing of paired image/text embeddings.
//!
//! Embeddings from frozen encoders are mapped through random Fourier features
//! and projected by encoders solved in closed form, trading off dependence on
//! a target attribute, independence from a sensitive attribute, and
//! image/text alignment. See [`trainer::train`] for the alternating loop and
//! [`metrics`] for fairness evaluation.

pub mod dependence;
pub mod error;
pub mod io;
pub mod kernel;
pub mod labels;
mod linalg;
pub mod metrics;
pub mod solver;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
