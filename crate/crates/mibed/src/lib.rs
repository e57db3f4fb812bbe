//! Gradient-based Bayesian experimental design for implicit models.
//!
//! The crate finds experimental designs that maximise the mutual information
//! between a variable of interest (parameters, a model indicator, both, or a
//! future observation) and simulated data, by jointly ascending a
//! neural-network-parametrised MI lower bound in the network parameters and
//! the design vector.
//!
//! Module map:
//!
//! * [`diffnet`] — scalar-output dense network with exact gradients and Adam;
//! * [`bounds`] — NWJ / InfoNCE / JSD values plus ψ- and design-gradients
//!   (pathwise and score-function estimators);
//! * [`toy`] — linear / logarithmic / square-root implicit models with
//!   Gaussian+Gamma noise and their design Jacobians;
//! * [`sde`] — SDE-based SIR/SEIR simulators with Poisson observations;
//! * [`reference`] — KDE likelihoods, nested-Monte-Carlo reference MI,
//!   reference posteriors and SNR/JS diagnostics;
//! * [`posterior`] — amortised posterior extraction from trained critics and
//!   evaluation metrics;
//! * [`runner`] — the end-to-end training loop, validation, experiment suite
//!   and file plumbing.

pub mod bounds;
pub mod diffnet;
pub mod error;
pub mod posterior;
pub mod reference;
pub mod runner;
pub mod sde;
pub mod task;
pub mod toy;
pub mod util;

pub use error::{Error, Result};
