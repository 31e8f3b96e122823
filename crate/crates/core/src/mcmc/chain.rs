use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::SamplerError;
use crate::linalg::Matrix;
use crate::mcmc::hmc::{hmc_step, StepSizeAdapter};
use crate::mcmc::integrator::PhaseState;
use crate::mcmc::mass::MassMatrix;
use crate::mcmc::mh::mh_step;
use crate::mcmc::nuts::nuts_step;
use crate::mcmc::qnhmc::{qnhmc_step, QnhmcConfig, QnhmcState};
use crate::mcmc::rmhmc::{rmhmc_step, RmhmcConfig, RmhmcState};
use crate::mcmc::sghmc::{sghmc_step, SghmcConfig, SghmcState};
use crate::mcmc::StepInfo;
use crate::models::{LogDensity, MinibatchSchedule, MinibatchStream};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum Kernel<S> {
    /// Random walk with per-coordinate proposal scale `ε · proposal_sd`.
    Mh {
        proposal_sd: Vec<S>,
    },
    Hmc,
    Nuts,
    Qnhmc(QnhmcConfig),
    Rmhmc(RmhmcConfig<S>),
    Sghmc(SghmcConfig<S>),
}

impl<S> Kernel<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Mh { .. } => "mh",
            Kernel::Hmc => "hmc",
            Kernel::Nuts => "nuts",
            Kernel::Qnhmc(_) => "qnhmc",
            Kernel::Rmhmc(_) => "rmhmc",
            Kernel::Sghmc(_) => "sghmc",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelConfig {
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// `δ`.
    pub target_accept: f64,
    pub adapt_step_size: bool,
    /// Iterations of step-size adaptation; defaults to the whole burn-in.
    pub adapt_window: Option<usize>,
    /// Estimate a diagonal mass (or MH proposal scale) from burn-in draws.
    pub adapt_mass: bool,
    pub max_tree_depth: usize,
    /// Fixed-length kernels draw each iteration's step size uniformly from
    /// `ε (1 ± step_jitter)`.
    pub step_jitter: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            n_leapfrog: 10,
            target_accept: 0.65,
            adapt_step_size: true,
            adapt_window: None,
            adapt_mass: false,
            max_tree_depth: 10,
            step_jitter: 0.1,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(SamplerError::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.n_leapfrog == 0 {
            return Err(SamplerError::Config("leapfrog steps must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(SamplerError::Config("target acceptance must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return Err(SamplerError::Config("step jitter must lie in [0, 1)".into()));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 12 {
            return Err(SamplerError::Config("max tree depth must lie in 1..=12".into()));
        }
        Ok(())
    }
}

/// A kernel with its tuning parameters and mass matrix.
#[derive(Clone, Debug)]
pub struct Sampler<S> {
    pub kernel: Kernel<S>,
    pub config: KernelConfig,
    /// `None` means the identity of the target's dimension.
    pub mass: Option<MassMatrix<S>>,
}

impl<S: Scalar> Sampler<S> {
    pub fn new(kernel: Kernel<S>, config: KernelConfig) -> Self {
        Self {
            kernel,
            config,
            mass: None,
        }
    }

    pub fn with_mass(mut self, mass: MassMatrix<S>) -> Self {
        self.mass = Some(mass);
        self
    }

    pub fn validate<T: LogDensity<S> + ?Sized>(&self, target: &T) -> Result<(), SamplerError> {
        self.config.validate()?;
        let d = target.dim();
        if let Some(m) = &self.mass {
            if m.dim() != d {
                return Err(SamplerError::Config(
                    "mass matrix dimension does not match target".into(),
                ));
            }
        }
        match &self.kernel {
            Kernel::Mh { proposal_sd } => {
                if proposal_sd.len() != d || proposal_sd.iter().any(|&s| !(s > S::zero())) {
                    return Err(SamplerError::Config(
                        "proposal scales must be positive, one per dimension".into(),
                    ));
                }
            }
            Kernel::Qnhmc(c) => c.validate()?,
            Kernel::Rmhmc(c) => c.validate(d)?,
            Kernel::Sghmc(c) => {
                let model = target
                    .as_model()
                    .ok_or_else(|| SamplerError::Config("sghmc needs a target with per-datum likelihood".into()))?;
                c.validate(d, model.n_data())?;
            }
            Kernel::Hmc | Kernel::Nuts => {}
        }
        Ok(())
    }

    /// Key/value description of the kernel settings.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let c = &self.config;
        let mut kv = vec![
            ("kernel".to_string(), self.kernel.name().to_string()),
            ("step_size".into(), format!("{:?}", c.step_size)),
            ("n_leapfrog".into(), c.n_leapfrog.to_string()),
            ("target_accept".into(), format!("{:?}", c.target_accept)),
            ("adapt_step_size".into(), c.adapt_step_size.to_string()),
            (
                "adapt_window".into(),
                c.adapt_window.map_or("burn_in".into(), |w| w.to_string()),
            ),
            ("adapt_mass".into(), c.adapt_mass.to_string()),
            ("step_jitter".into(), format!("{:?}", c.step_jitter)),
            (
                "mass".into(),
                self.mass.as_ref().map_or("identity", |m| m.kind_name()).to_string(),
            ),
        ];
        match &self.kernel {
            Kernel::Nuts => kv.push(("max_tree_depth".into(), c.max_tree_depth.to_string())),
            Kernel::Qnhmc(q) => {
                kv.push(("memory".into(), q.memory.to_string()));
                kv.push(("eta_b".into(), format!("{:?}", q.eta_b)));
                kv.push(("preconditioner".into(), format!("{:?}", q.preconditioner)));
            }
            Kernel::Rmhmc(r) => {
                kv.push(("fixed_point_iters".into(), r.fixed_point_iters.to_string()));
                kv.push(("jitter".into(), format!("{:?}", r.jitter)));
            }
            Kernel::Sghmc(s) => {
                kv.push(("batch_size".into(), s.batch_size.to_string()));
                kv.push((
                    "friction_trace".into(),
                    format!("{:?}", s.friction.trace().to_f64_lossy()),
                ));
            }
            _ => {}
        }
        kv
    }
}

/// Post-burn-in draws and run statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain<S> {
    pub samples: Matrix<S>,
    /// Accepted proposals after burn-in.
    pub accepted: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    /// `H' − H` per kept step.
    pub energy_errors: Vec<S>,
    pub divergences: usize,
    /// Gradient evaluations spent after burn-in.
    pub grad_evals: usize,
    /// Step size in effect after adaptation.
    pub step_size: f64,
}

impl<S: Scalar> Chain<S> {
    pub fn n_kept(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.n_kept() == 0 {
            0.0
        } else {
            self.accepted as f64 / self.n_kept() as f64
        }
    }

    pub fn mean(&self) -> Vec<S> {
        let n = S::from_usize(self.n_kept().max(1)).unwrap();
        (0..self.dim())
            .map(|j| self.samples.column(j).into_iter().sum::<S>() / n)
            .collect()
    }

    pub fn covariance(&self) -> Matrix<S> {
        sample_covariance(&self.samples)
    }
}

/// Unbiased sample covariance of the rows of `x`.
pub fn sample_covariance<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    let (n, d) = (x.rows(), x.cols());
    let nf = S::from_usize(n).unwrap();
    let mean: Vec<S> = (0..d).map(|j| x.column(j).into_iter().sum::<S>() / nf).collect();
    let mut c = Matrix::zeros(d, d);
    for row in x.iter_rows() {
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] = c[(i, j)] + (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    c.scale(S::one() / (nf - S::one()))
}

/// Seed for chain `index` derived from `master` (SplitMix64 finaliser).
pub fn chain_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[allow(clippy::large_enum_variant)]
enum KernelState<S> {
    Plain,
    Qn(QnhmcState<S>),
    Rm(RmhmcState<S>),
    Sg { stream: MinibatchStream, noise: Matrix<S> },
}

/// Runs one chain of `n_total` iterations and keeps the last
/// `n_total − burn_in`. Step size, mass and kernel-specific adaptation happen
/// only during burn-in.
pub fn run_chain<S, T>(
    sampler: &Sampler<S>,
    target: &T,
    init: &[S],
    n_total: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Chain<S>, SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
{
    if n_total <= burn_in {
        return Err(SamplerError::Config(format!(
            "n_total ({n_total}) must exceed burn_in ({burn_in})"
        )));
    }
    sampler.validate(target)?;
    let d = target.dim();
    let cfg = &sampler.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = PhaseState::new(target, init.to_vec())?;
    if z.log_density == S::neg_infinity() {
        return Err(SamplerError::ZeroDensityStart);
    }
    let mut mass = sampler.mass.clone().unwrap_or_else(|| MassMatrix::identity(d));
    let mut proposal_sd = match &sampler.kernel {
        Kernel::Mh { proposal_sd } => proposal_sd.clone(),
        _ => Vec::new(),
    };
    let mut kstate = match &sampler.kernel {
        Kernel::Qnhmc(c) => KernelState::Qn(QnhmcState::new(d, c)),
        Kernel::Rmhmc(_) => KernelState::Rm(RmhmcState::default()),
        Kernel::Sghmc(c) => KernelState::Sg {
            stream: MinibatchStream::new(
                target.as_model().expect("validated").n_data(),
                MinibatchSchedule {
                    size: c.batch_size,
                    shuffle_seed: c.shuffle_seed ^ seed,
                },
            ),
            noise: c.noise_factor()?,
        },
        _ => KernelState::Plain,
    };
    let mut sg = SghmcState {
        lambda: z.lambda.clone(),
        nu: mass.sample_momentum(&mut rng),
    };

    let adapts = cfg.adapt_step_size && !matches!(sampler.kernel, Kernel::Sghmc(_));
    let window = if adapts {
        cfg.adapt_window.unwrap_or(burn_in).min(burn_in)
    } else {
        0
    };
    let mass_window = if cfg.adapt_mass && !matches!(sampler.kernel, Kernel::Rmhmc(_)) {
        let stop = if window > 0 { window * 3 / 4 } else { burn_in * 3 / 4 };
        Some((stop / 5, stop))
    } else {
        None
    };
    let mut adapter = StepSizeAdapter::new(cfg.step_size, cfg.target_accept);
    let mut eps = cfg.step_size;
    let mut mass_draws: Vec<Vec<S>> = Vec::new();

    let n_kept = n_total - burn_in;
    let mut samples = Vec::with_capacity(n_kept * d);
    let mut energy_errors = Vec::with_capacity(n_kept);
    let (mut accepted, mut divergences, mut burn_div, mut grad_evals) = (0, 0, 0, 0);

    for it in 0..n_total {
        let in_burn = it < burn_in;
        let fixed_length = matches!(sampler.kernel, Kernel::Hmc | Kernel::Qnhmc(_) | Kernel::Rmhmc(_));
        let e = if fixed_length && cfg.step_jitter > 0.0 {
            S::lit(eps * (1.0 + cfg.step_jitter * (2.0 * rng.random::<f64>() - 1.0)))
        } else {
            S::lit(eps)
        };
        let info: StepInfo<S> = match (&sampler.kernel, &mut kstate) {
            (Kernel::Mh { .. }, _) => {
                let sd: Vec<S> = proposal_sd.iter().map(|&s| s * e).collect();
                let (l, lp, info) = mh_step(&z.lambda, z.log_density, &sd, target, &mut rng)?;
                z.lambda = l;
                z.log_density = lp;
                info
            }
            (Kernel::Hmc, _) => {
                let (nz, info) = hmc_step(&z, e, cfg.n_leapfrog, &mass, target, &mut rng)?;
                z = nz;
                info
            }
            (Kernel::Nuts, _) => {
                let (nz, info) = nuts_step(&z, e, cfg.max_tree_depth, &mass, target, &mut rng)?;
                z = nz;
                info
            }
            (Kernel::Qnhmc(c), KernelState::Qn(st)) => {
                let learn = in_burn || c.update_after_burn_in;
                let (nz, info) = qnhmc_step(&z, e, cfg.n_leapfrog, &mass, st, learn, target, &mut rng)?;
                z = nz;
                info
            }
            (Kernel::Rmhmc(c), KernelState::Rm(st)) => {
                let learn = in_burn || c.update_after_burn_in;
                let (nz, info) = rmhmc_step(&z, e, cfg.n_leapfrog, c, st, learn, target, &mut rng)?;
                z = nz;
                info
            }
            (Kernel::Sghmc(c), KernelState::Sg { stream, noise }) => {
                let model = target.as_model().expect("validated");
                let batch = stream.next_batch().to_vec();
                let info = sghmc_step(&mut sg, &batch, e, &mass, c, noise, model, &mut rng)?;
                z.lambda.clone_from(&sg.lambda);
                info
            }
            _ => unreachable!("kernel state matches kernel"),
        };

        if in_burn {
            burn_div += info.divergent as usize;
            if it < window {
                adapter.update(info.accept_prob.to_f64_lossy());
                eps = if it + 1 == window {
                    adapter.finish()
                } else {
                    adapter.current()
                };
            }
            if let Some((start, stop)) = mass_window {
                if it >= start && it < stop {
                    mass_draws.push(z.lambda.clone());
                }
                if it + 1 == stop && mass_draws.len() >= 10 {
                    let var = sample_covariance(&Matrix::from_rows(&mass_draws)).diag();
                    let var: Vec<S> = var.into_iter().map(|v| v.max(S::lit(1e-10))).collect();
                    match &sampler.kernel {
                        Kernel::Mh { .. } => {
                            let c = S::lit(2.38) / S::from_usize(d).unwrap().sqrt();
                            proposal_sd = var.iter().map(|&v| v.sqrt() * c).collect();
                            eps = 1.0;
                        }
                        _ => mass = MassMatrix::from_variances(&var)?,
                    }
                    if it < window {
                        adapter = StepSizeAdapter::new(eps, cfg.target_accept);
                    }
                }
            }
            if it + 1 == burn_in && burn_in > 0 && 2 * burn_div > burn_in {
                return Err(SamplerError::Unstable {
                    divergent: burn_div,
                    total: burn_in,
                });
            }
        } else {
            samples.extend_from_slice(&z.lambda);
            energy_errors.push(info.delta_h);
            accepted += info.accepted as usize;
            divergences += info.divergent as usize;
            grad_evals += info.n_grad;
        }
    }
    Ok(Chain {
        samples: Matrix::from_vec(n_kept, d, samples),
        accepted,
        burn_in,
        seed,
        config: sampler.snapshot(),
        energy_errors,
        divergences,
        grad_evals,
        step_size: eps,
    })
}

/// Runs `inits.len()` chains in parallel; chain `i` uses
/// [`chain_seed`]`(master_seed, i)`.
pub fn run_chains<S, T>(
    sampler: &Sampler<S>,
    target: &T,
    inits: &[Vec<S>],
    n_total: usize,
    burn_in: usize,
    master_seed: u64,
) -> Result<Vec<Chain<S>>, SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + Sync + ?Sized,
{
    inits
        .par_iter()
        .enumerate()
        .map(|(i, init)| run_chain(sampler, target, init, n_total, burn_in, chain_seed(master_seed, i)))
        .collect()
}
