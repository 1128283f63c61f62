//! Best-equivariant estimation workbench.
//!
//! Generalized Bayes (Pitman) estimators for location and scale families, the
//! James–Stein triangular-group covariance estimator, the Gaussian prior
//! sequences whose Bayes rules approach them, and Monte Carlo risk harnesses
//! that check constant risk, `r_k <= R0` and `r_k -> R0`.
//!
//! Module map:
//!
//! * [`model`]: density families, samples and the three invariant losses.
//! * [`quad`]: log-domain adaptive quadrature on the real line and half-line.
//! * [`pitman`]: location and scale estimators (invariant and Gaussian-prior).
//! * [`wishart`]: triangular algebra, Wishart law, covariance estimators.
//! * [`risk`]: frequentist and Bayes risk by Monte Carlo, sweeps over `k`.
//! * [`cli`]: configuration-driven experiment runner.

pub mod cli;
pub mod error;
pub mod model;
pub mod pitman;
pub mod quad;
pub mod risk;
pub mod rng;
pub mod wishart;

pub use error::{Error, Result};
