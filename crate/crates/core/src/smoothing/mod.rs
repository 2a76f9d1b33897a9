//! E-step engines: a bootstrap particle filter with FFBSm smoothing over the
//! interval-censored output, the exact Kalman smoother used by the baseline,
//! and assembly of the EM sufficient statistics.

pub mod kalman;
pub mod moments;
pub mod normal;
pub mod particle;

pub use kalman::{kalman_smoother_moments, KalmanSmoother};
pub use moments::{estep_moments, MomentSet};
pub use normal::{interval_likelihood, log_interval_likelihood, truncated_gaussian_mean};
pub use particle::{
    pairwise_weights, particle_filter, particle_smoother, CensoredOutput, FilterConfig, FilterOutput,
    GaussianOutput, OutputModel, ParticleSet, SmoothedEnsemble,
};
