pub mod data;
pub mod heads;
pub mod mdn;
pub mod network;
pub mod predictive;
pub mod prior;
pub mod target;
pub mod train;

pub use data::{Dataset, MinibatchSchedule, MinibatchStream};
pub use heads::{log_likelihood, LikelihoodHead};
pub use mdn::{mdn_log_likelihood, simulate_catalogue, HaloCatalogue, MdnPoisson, MixtureComponent};
pub use network::{mlp_forward, Activation, NetworkSpec};
pub use predictive::{posterior_predictive, PredictiveSamples};
pub use prior::{log_prior, PriorKind, PriorSpec};
pub use target::{
    unnorm_log_posterior, AnalyticTarget, BayesianModel, FnDensity, GaussianMeanModel, GaussianTarget, LogDensity,
    NetworkTarget, Observations,
};
pub use train::{train_point_estimate, OptimiserConfig, PointEstimate, TrainResult};
