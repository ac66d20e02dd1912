//! Bayesian neural network posterior sampling from mini-batch loss
//! estimates, with a penalty correction on the Metropolis–Hastings
//! acceptance for the estimator's variance.
//!
//! The crate bundles the double-pendulum data generator, the mixture
//! density network likelihood, the loss-difference estimators, five
//! samplers, analytic validation oracles, predictive metrics, and the
//! experiment driver behind the `pbnn` binary.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod loss;
pub mod mdn;
pub mod metrics;
pub mod oracles;
pub mod par;
pub mod pendulum;
pub mod pretrain;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
