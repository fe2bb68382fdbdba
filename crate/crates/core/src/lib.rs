//! Partially hidden Markov chain linear autoregressive (PHMC-LAR) models.
//!
//! A PHMC-LAR couples a `K`-state Markov chain, whose state may be observed
//! (labelled) at some time-steps and hidden at others, with a per-state
//! Gaussian LAR(`p`) process on the observed series.

pub mod decode;
pub mod em;
pub mod error;
pub mod experiments;
pub mod forecast;
pub mod io;
pub mod model;
pub mod smoothing;

pub use error::{Error, Result};
