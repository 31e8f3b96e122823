//! Command-line front end for `deskbayes`: experiment configs, chain files,
//! diagnostics and plot data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chainfile;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod plot;

pub use chainfile::{load_chain, save_chain};
pub use config::ExperimentConfig;
pub use dataset::{load_dataset_csv, load_probabilities_csv};
pub use error::CliError;
pub use experiment::{resolve_output_dir, run_experiment, Manifest, RunSummary};
pub use plot::{emit_plot_data, PlotKind};
