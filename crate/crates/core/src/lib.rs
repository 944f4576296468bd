//! klrisk: likelihood inference built around the Kullback-Leibler risk.
//!
//! The crate covers one connected toolchain:
//!
//! * [`families`] — exponential, Weibull, normal and binomial laws with
//!   densities, survival functions, seeded samplers and closed-form MLE
//!   oracles;
//! * [`data`] — exact / right-censored observations and grouped outcomes,
//!   with fixed CSV formats;
//! * [`divergence`] — Kullback-Leibler divergence on the fully observed
//!   variable and on the censored observation, a Monte Carlo oracle, and
//!   misspecification-risk minimization;
//! * [`likelihood`] — censored-data log-likelihood, Gauss-Hermite marginal
//!   likelihood for random-intercept models, scores and information
//!   matrices;
//! * [`optim`] — BFGS maximization and the monotone constraint-matching
//!   driver;
//! * [`penalized`] — spline log-hazard models, curvature penalties, maximum
//!   penalized likelihood, sieve fits and KKT diagnostics;
//! * [`hlik`] — hierarchical (joint) likelihood for random intercepts with
//!   profile dispersion estimation and marginal comparisons;
//! * [`selection`] — AIC / EKL scores, risk differences, likelihood
//!   cross-validation and simulation harnesses.
//!
//! Monte Carlo draws, simulation replicates and cross-validation tasks run
//! data-parallel under the default `parallel` feature and sequentially
//! without it; results are bit-identical either way (fixed task splits,
//! ordered merges, explicit seeds).

pub mod bspline;
pub mod data;
pub mod divergence;
pub mod error;
mod exec;
pub mod families;
pub mod hlik;
pub mod likelihood;
pub mod optim;
pub mod penalized;
pub mod quad;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
