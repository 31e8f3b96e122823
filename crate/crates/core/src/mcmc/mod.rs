//! Markov chain Monte Carlo kernels over a [`LogDensity`](crate::models::LogDensity).

pub mod chain;
pub mod hmc;
pub mod integrator;
pub mod mass;
pub mod mh;
pub mod nuts;
pub mod qnhmc;
pub mod rmhmc;
pub mod sghmc;

pub use chain::{chain_seed, run_chain, run_chains, sample_covariance, Chain, Kernel, KernelConfig, Sampler};
pub use hmc::{adapt_step_size, hmc_step, StepSizeAdapter};
pub use integrator::{leapfrog, leapfrog_preconditioned, PhaseState};
pub use mass::MassMatrix;
pub use mh::{mh_accept_probability, mh_step};
pub use nuts::{nuts_step, u_turn};
pub use qnhmc::{qnhmc_step, Preconditioner, QnhmcConfig, QnhmcState};
pub use rmhmc::{rmhmc_step, MetricSource, RmhmcConfig, RmhmcState};
pub use sghmc::{minibatch_grad_v, sghmc_step, SghmcConfig, SghmcState};

/// `|ΔH|` above which a trajectory counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Outcome of a single transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo<S> {
    /// Metropolis acceptance probability (mean over leaves for NUTS).
    pub accept_prob: S,
    pub accepted: bool,
    /// `H(z') − H(z)`.
    pub delta_h: S,
    pub divergent: bool,
    /// An implicit integrator step failed to converge.
    pub non_converged: bool,
    pub n_grad: usize,
}

impl<S: num_traits::Float> StepInfo<S> {
    pub fn new(accept_prob: S) -> Self {
        Self {
            accept_prob,
            accepted: false,
            delta_h: S::zero(),
            divergent: false,
            non_converged: false,
            n_grad: 0,
        }
    }
}
