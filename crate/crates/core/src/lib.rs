//! Bayesian inference for small differentiable models.
//!
//! Everything numerical is generic over [`Scalar`]; the aliases below fix the
//! scalar to [`Real`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod mcmc;
pub mod models;
pub mod scalar;
pub mod vi;

pub use scalar::Scalar;

/// Default real type.
pub type Real = f64;

pub type Matrix = linalg::Matrix<Real>;
pub type Graph = autodiff::Graph<Real>;
pub type Dataset = models::Dataset<Real>;
pub type NetworkTarget = models::NetworkTarget<Real>;
pub type AnalyticTarget = models::AnalyticTarget<Real>;
pub type GaussianTarget = models::GaussianTarget<Real>;
pub type Chain = mcmc::Chain<Real>;
pub type Sampler = mcmc::Sampler<Real>;
pub type Kernel = mcmc::Kernel<Real>;
pub type MassMatrix = mcmc::MassMatrix<Real>;
pub type MeanFieldGaussian = vi::MeanFieldGaussian<Real>;
pub type BijectorSpec = vi::BijectorSpec<Real>;
pub type PredictiveSamples = models::PredictiveSamples<Real>;
