//! Hierarchical Bayesian inversion for linear inverse problems under
//! Student's t Markov random field priors.
//!
//! The prior places a Student's t distribution on first-order differences of
//! the unknown, represented as a Gaussian scale mixture: each difference is
//! conditionally Gaussian with an inverse-gamma mixing variance. This makes
//! most full conditionals of the hierarchical posterior conjugate, so the
//! posterior over `(x, sigma2_obs, tau2, w2, nu)` can be explored with a
//! random-scan Gibbs sampler. A No-U-Turn sampler over the direct (non-mixture)
//! parameterization is included for validation, together with Laplace and
//! Cauchy comparison priors and the usual MCMC diagnostics (ESS, split R-hat,
//! highest density intervals, relative reconstruction error).
//!
//! The [`experiments`] module ships the 1D deconvolution and 2D deblurring
//! test problems and drives end-to-end runs; the `tmrf` CLI wraps it.

pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod gaussian_conditional;
pub mod gibbs;
pub mod model;
pub mod nuts;
pub mod operators;

pub use error::{Error, Result};
