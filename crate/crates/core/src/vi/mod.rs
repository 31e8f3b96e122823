//! Variational approximations to posteriors.

pub mod gaussian;
pub mod grid;
pub mod ks;
pub mod layers;
pub mod network;
pub mod neutra;

pub use gaussian::{
    bbb_fit, bbb_step, elbo_estimate, elbo_gradient_with, kl_gaussian, reparam_sample, BbbConfig, BbbFit, BbbStep,
    ElboEstimate, ElboGradient, MeanFieldGaussian,
};
pub use grid::{cavi_fit, cavi_sweep, cavi_update, grid_elbo, kl_grid, CaviFit, GridDistribution, GridTarget};
pub use ks::{ks_critical_value, ks_statistic, ks_two_sample, KsOutcome};
pub use layers::{
    dropout_forward, dropout_multiplier, flipout_forward, gradient_variance_probe, local_reparam_forward,
    weight_sample_forward, DropoutKind, DropoutSpec, FlipoutLayer, FlipoutNoise, NoiseMethod, ToyLayerProblem,
};
pub use network::{
    dropout_fit, dropout_objective, mc_dropout_predict, network_elbo_gradient, network_vi_fit, rank_for_labelling,
    DropoutFit, DropoutTrainConfig,
};
pub use neutra::{neutra_fit, neutra_fit_and_sample, BijectorSpec, NeutraFit, NeutraFitConfig, NeutraRun, PulledBack};
