//! Chain diagnostics and probability calibration.

pub mod bald;
pub mod calibration;
pub mod convergence;

pub use bald::{bald_mutual_information, bald_scores, entropy, rank_by_score};
pub use calibration::{
    expected_calibration_error, platt_apply, platt_fit, reliability_diagram, Bin, PlattModel, ReliabilityBins,
};
pub use convergence::{chain_stats, effective_sample_size, ess_multi, r_hat, ChainStats, EssEstimate};
