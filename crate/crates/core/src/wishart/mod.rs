//! Covariance estimation under the lower-triangular group.

pub mod density;
pub mod estimator;
pub mod linalg;
pub mod prior;

pub use density::{
    haar_left_log, haar_right_log, log_normalizer, log_wishart_density_t, log_wishart_kernel, sample_bartlett,
    sample_bartlett_standard, WishartModel,
};
pub use estimator::{
    bayes_cov_estimator, delta_star_cov, invariant_prior_constant_check, james_stein_constants, mle, sigma0_hat,
    ImportanceEstimate, McConfig, Proposal, MIN_DRAWS, MIN_ESS,
};
pub use linalg::{LowerTriangular, Matrix, PackedTriangular};
pub use prior::{KSchedule, XiVector, K_MAX};
