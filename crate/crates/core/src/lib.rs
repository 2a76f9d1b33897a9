//! Identification of continuous-time LTI state-space models from inputs and
//! send-on-delta (Lebesgue) sampled outputs.
//!
//! The pipeline is:
//!
//! 1. [`discretize`] maps a [`ContinuousModel`] to its zero-order-hold shift
//!    and incremental equivalents on a user-chosen fast grid `Δ`.
//! 2. [`sampler`] simulates the stochastic system on that grid and applies the
//!    hysteresis quantizer, producing per-step censoring intervals.
//! 3. [`smoothing`] runs a bootstrap particle filter / FFBSm smoother over the
//!    interval-censored output (or an exact Kalman smoother for the baseline)
//!    and assembles the sufficient statistics of the EM surrogate.
//! 4. [`em`] iterates the closed-form M-steps until the similarity-invariant
//!    parameters settle.
//!
//! [`experiment`] wraps all of it into reproducible Monte Carlo studies.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretize;
pub mod em;
mod error;
pub mod experiment;
pub mod io;
pub(crate) mod linalg;
pub mod model;
pub mod response;
pub mod sampler;
pub mod smoothing;

pub use error::{Error, Result};
pub use model::{ContinuousModel, IncrementalModel, InitialState, InvariantParameters, ShiftModel};
