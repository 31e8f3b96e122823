//! Runs a configured experiment and writes its artifacts.

use std::path::{Path, PathBuf};

use deskbayes::diagnostics::chain_stats;
use deskbayes::linalg::Matrix;
use deskbayes::mcmc::{
    chain_seed, run_chains, KernelConfig, MetricSource, Preconditioner, QnhmcConfig, RmhmcConfig, SghmcConfig,
};
use deskbayes::models::{
    Activation, LikelihoodHead, LogDensity, MinibatchSchedule, NetworkSpec, Observations, PriorSpec,
};
use deskbayes::vi::{
    bbb_fit, cavi_fit, dropout_fit, elbo_estimate, mc_dropout_predict, network_vi_fit, neutra_fit_and_sample,
    BbbConfig, DropoutKind, DropoutSpec, DropoutTrainConfig, GridTarget, NeutraFitConfig, NoiseMethod,
};
use deskbayes::{
    AnalyticTarget, BijectorSpec, Chain, Dataset, GaussianTarget, Kernel, MeanFieldGaussian, NetworkTarget, Sampler,
    Scalar,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::chainfile::encode_chain;
use crate::config::{
    ActivationName, DropoutKindName, ExperimentConfig, HeadName, Method, MetricName, PreconditionerName, TargetConfig,
};
use crate::dataset::load_dataset_csv;
use crate::error::CliError;

/// Overrides every other choice of output directory.
pub const OUTPUT_DIR_ENV: &str = "DESKBAYES_OUTPUT_DIR";

/// Fewer kept draws than this and ESS/R-hat are reported as null.
const MIN_DRAWS_FOR_STATS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub method: String,
    pub seed: u64,
    pub config_sha256: String,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    /// SHA-256 of the written manifest file.
    pub manifest_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `$DESKBAYES_OUTPUT_DIR`, else `output_dir` from the config (relative to
/// the config file), else `<config stem>.out` beside the config.
pub fn resolve_output_dir(cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    match &cfg.output_dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => base.join(d),
        None => {
            let stem = config_path
                .file_stem()
                .map_or("run".into(), |s| s.to_string_lossy().into_owned());
            base.join(format!("{stem}.out"))
        }
    }
}

/// Hash of everything that determines the results: the config without its
/// output directory, with the dataset path replaced by the dataset's hash.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let mut c = cfg.clone();
    c.output_dir = None;
    if let TargetConfig::Mlp { dataset, .. } = &mut c.target {
        let bytes = std::fs::read(&*dataset).map_err(|e| CliError::io(&*dataset, e))?;
        *dataset = PathBuf::from(format!("sha256:{}", sha256_hex(&bytes)));
    }
    let text = serde_json::to_vec(&c).expect("config serialises");
    Ok(sha256_hex(&text))
}

struct Network {
    spec: NetworkSpec,
    prior: PriorSpec,
    data: Dataset,
    target: NetworkTarget,
}

enum Built {
    Analytic(AnalyticTarget),
    Network(Box<Network>),
}

impl Built {
    fn density(&self) -> &(dyn LogDensity<f64> + Sync) {
        match self {
            Built::Analytic(t) => t,
            Built::Network(n) => &n.target,
        }
    }

    fn network(&self) -> Result<&Network, CliError> {
        match self {
            Built::Network(n) => Ok(n),
            Built::Analytic(_) => Err(CliError::Validation("method needs an mlp target".into())),
        }
    }
}

fn build_target(cfg: &ExperimentConfig) -> Result<Built, CliError> {
    Ok(match &cfg.target {
        TargetConfig::Gaussian { mean, cov, variances } => {
            let g = match (cov, variances) {
                (Some(c), _) => GaussianTarget::new(mean.clone(), Matrix::from_rows(c))?,
                (None, Some(v)) => GaussianTarget::diagonal(mean.clone(), v)?,
                (None, None) => GaussianTarget::new(mean.clone(), Matrix::identity(mean.len()))?,
            };
            Built::Analytic(AnalyticTarget::Gaussian(g))
        }
        TargetConfig::Banana { a, b } => Built::Analytic(AnalyticTarget::Banana { a: *a, b: *b }),
        TargetConfig::Funnel { dim } => Built::Analytic(AnalyticTarget::Funnel { dim: *dim }),
        TargetConfig::Mlp {
            dataset,
            widths,
            activations,
            head,
            classes,
            trials,
            prior_sigma,
            prior_uniform,
            minibatch_size,
            shuffle_seed,
        } => {
            let acts: Vec<Activation> = if activations.is_empty() {
                vec![Activation::Tanh; widths.len().saturating_sub(2)]
            } else {
                activations
                    .iter()
                    .map(|a| match a {
                        ActivationName::Tanh => Activation::Tanh,
                        ActivationName::Relu => Activation::Relu,
                        ActivationName::Identity => Activation::Identity,
                    })
                    .collect()
            };
            let head = match head {
                HeadName::UnitGaussian => LikelihoodHead::UnitGaussian,
                HeadName::HeteroscedasticGaussian => LikelihoodHead::HeteroscedasticGaussian,
                HeadName::Categorical => LikelihoodHead::Categorical {
                    classes: classes.unwrap_or(0),
                },
                HeadName::Binomial => LikelihoodHead::Binomial {
                    trials: trials.unwrap_or(0),
                },
            };
            let spec = NetworkSpec::new(widths.clone(), acts, head)?;
            let prior = match prior_uniform {
                Some([lo, hi]) => PriorSpec::uniform(*lo, *hi),
                None => PriorSpec::isotropic(*prior_sigma),
            };
            let mut data = load_dataset_csv(dataset)?;
            if let Some(size) = minibatch_size {
                let schedule = MinibatchSchedule {
                    size: *size,
                    shuffle_seed: shuffle_seed.unwrap_or(cfg.seed),
                };
                data = data.with_minibatch(schedule)?;
            }
            let target = NetworkTarget::new(spec.clone(), prior.clone(), Observations::Rows(data.clone()))?;
            Built::Network(Box::new(Network {
                spec,
                prior,
                data,
                target,
            }))
        }
    })
}

fn gaussian_draws(n: usize, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| sd * f64::std_normal(rng)).collect()
}

/// Base starting point: the configured init, zeros for analytic targets, or
/// small random weights for networks.
fn base_init(cfg: &ExperimentConfig, built: &Built) -> Result<Vec<f64>, CliError> {
    let d = built.density().dim();
    if let Some(init) = &cfg.mcmc.init {
        if init.len() != d {
            return Err(CliError::Validation(format!(
                "init has {} entries, target dimension is {d}",
                init.len()
            )));
        }
        return Ok(init.clone());
    }
    Ok(match built {
        Built::Analytic(_) => vec![0.0; d],
        Built::Network(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1417_0000_5EED_0000);
            gaussian_draws(d, 0.1, &mut rng)
        }
    })
}

fn chain_inits(cfg: &ExperimentConfig, base: &[f64]) -> Vec<Vec<f64>> {
    (0..cfg.mcmc.chains)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(chain_seed(cfg.seed, i) ^ 0x5EED_1417);
            let jitter = gaussian_draws(base.len(), cfg.mcmc.init_jitter, &mut rng);
            base.iter().zip(jitter).map(|(b, j)| b + j).collect()
        })
        .collect()
}

fn kernel_config(cfg: &ExperimentConfig) -> KernelConfig {
    let m = &cfg.mcmc;
    KernelConfig {
        step_size: m.step_size,
        n_leapfrog: m.n_leapfrog,
        target_accept: m.target_accept,
        adapt_step_size: m.adapt_step_size,
        adapt_window: None,
        adapt_mass: m.adapt_mass,
        max_tree_depth: m.max_tree_depth,
        step_jitter: m.step_jitter,
    }
}

fn build_sampler(cfg: &ExperimentConfig, built: &Built) -> Result<Sampler, CliError> {
    let m = &cfg.mcmc;
    let d = built.density().dim();
    let kernel = match cfg.method {
        Method::Mh => {
            let sd = m.proposal_sd.clone().unwrap_or_else(|| vec![1.0; d]);
            Kernel::Mh { proposal_sd: sd }
        }
        Method::Hmc | Method::Neutra => Kernel::Hmc,
        Method::Nuts => Kernel::Nuts,
        Method::Qnhmc => Kernel::Qnhmc(QnhmcConfig {
            memory: m.qnhmc_memory,
            preconditioner: match m.preconditioner {
                PreconditionerName::SqrtInverseHessian => Preconditioner::SqrtInverseHessian,
                PreconditionerName::InverseHessian => Preconditioner::InverseHessian,
            },
            ..QnhmcConfig::default()
        }),
        Method::Rmhmc => Kernel::Rmhmc(RmhmcConfig::new(match m.metric {
            MetricName::Fisher => MetricSource::TargetFisher,
            MetricName::Identity => MetricSource::Constant(Matrix::identity(d)),
            MetricName::GradientOuterProduct => MetricSource::GradientOuterProduct {
                window: m.metric_window,
            },
        })),
        Method::Sghmc => {
            let net = built.network()?;
            let mb = net
                .data
                .minibatch
                .ok_or_else(|| CliError::Validation("sghmc needs a minibatch schedule".into()))?;
            Kernel::Sghmc(SghmcConfig::isotropic(d, m.friction, mb.size, mb.shuffle_seed))
        }
        other => unreachable!("{} is not a sampler", other.name()),
    };
    let sampler = Sampler::new(kernel, kernel_config(cfg));
    sampler.validate(built.density())?;
    Ok(sampler)
}

/// Artifacts accumulated in memory, written once the computation succeeds.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn json(&mut self, name: &str, value: &Value) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("json serialises");
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
    }
}

fn chain_outputs(out: &mut Outputs, chains: &[Chain], extra: Value) -> Result<(), CliError> {
    for (i, c) in chains.iter().enumerate() {
        out.files.push((format!("chain_{i}.dbc"), encode_chain(c)));
    }
    let per_chain: Vec<Value> = chains
        .iter()
        .map(|c| {
            json!({
                "seed": c.seed,
                "acceptance_rate": c.acceptance_rate(),
                "divergences": c.divergences,
                "grad_evals": c.grad_evals,
                "step_size": c.step_size,
            })
        })
        .collect();
    let n_kept = chains.iter().map(Chain::n_kept).min().unwrap_or(0);
    let (ess, degenerate, r_hat) = if n_kept >= MIN_DRAWS_FOR_STATS {
        let s = chain_stats(chains)?;
        (json!(s.ess), json!(s.degenerate), json!(s.r_hat))
    } else {
        (Value::Null, Value::Null, Value::Null)
    };
    let acceptance = chains.iter().map(Chain::acceptance_rate).sum::<f64>() / chains.len().max(1) as f64;
    let mut stats = json!({
        "acceptance_rate": acceptance,
        "divergences": chains.iter().map(|c| c.divergences).sum::<usize>(),
        "ess": ess,
        "ess_degenerate": degenerate,
        "r_hat": r_hat,
        "chains": per_chain,
    });
    if let (Value::Object(s), Value::Object(e)) = (&mut stats, extra) {
        s.extend(e);
    }
    out.json("stats.json", &stats);
    Ok(())
}

fn run_mcmc(cfg: &ExperimentConfig, built: &Built, out: &mut Outputs) -> Result<(), CliError> {
    let sampler = build_sampler(cfg, built)?;
    let inits = chain_inits(cfg, &base_init(cfg, built)?);
    let m = &cfg.mcmc;
    let chains = run_chains(
        &sampler,
        built.density(),
        &inits,
        m.burn_in + m.samples,
        m.burn_in,
        cfg.seed,
    )?;
    chain_outputs(out, &chains, json!({}))
}

fn run_neutra(cfg: &ExperimentConfig, built: &Built, out: &mut Outputs) -> Result<(), CliError> {
    let sampler = build_sampler(cfg, built)?;
    let target = built.density();
    let fit_cfg = NeutraFitConfig {
        iterations: cfg.vi.neutra_fit_iterations,
        n_mc: cfg.vi.neutra_fit_n_mc,
        learning_rate: cfg.vi.neutra_learning_rate,
    };
    let m = &cfg.mcmc;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bijector = BijectorSpec::identity(target.dim());
    let mut chains = Vec::with_capacity(m.chains);
    let (mut elbo_trace, mut fit_evals) = (Vec::new(), 0);
    for i in 0..m.chains {
        let run = neutra_fit_and_sample(
            bijector.clone(),
            target,
            &fit_cfg,
            &sampler,
            m.burn_in + m.samples,
            m.burn_in,
            chain_seed(cfg.seed, i),
            &mut rng,
        )?;
        if i == 0 {
            elbo_trace = run.fit.elbo_trace.clone();
            fit_evals = run.fit.grad_evals;
        }
        bijector = run.fit.bijector;
        chains.push(run.chain);
    }
    out.json(
        "variational.json",
        &json!({
            "method": "neutra",
            "shift": bijector.shift,
            "log_scale": bijector.log_scale,
            "elbo_trace": elbo_trace,
            "fit_grad_evals": fit_evals,
        }),
    );
    chain_outputs(
        out,
        &chains,
        json!({ "final_elbo": elbo_trace.last(), "fit_grad_evals": fit_evals }),
    )
}

fn initial_q(cfg: &ExperimentConfig, built: &Built) -> Result<MeanFieldGaussian, CliError> {
    let mu = base_init(cfg, built)?;
    let sigma = vec![cfg.vi.init_sigma; mu.len()];
    Ok(MeanFieldGaussian::new(mu, &sigma)?)
}

fn bbb_config(cfg: &ExperimentConfig, built: &Built) -> BbbConfig {
    let v = &cfg.vi;
    BbbConfig {
        learning_rate: v.learning_rate,
        n_mc: v.n_mc,
        iterations: v.iterations,
        momentum: v.momentum,
        minibatch: match built {
            Built::Network(n) => n.data.minibatch,
            Built::Analytic(_) => None,
        },
        average_tail: v.average_tail,
    }
}

fn run_gaussian_vi(cfg: &ExperimentConfig, built: &Built, out: &mut Outputs) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = initial_q(cfg, built)?;
    let bbb = bbb_config(cfg, built);
    let fit = match cfg.method {
        Method::Bbb => bbb_fit(init, built.density(), &bbb, &mut rng)?,
        Method::LocalReparam | Method::Flipout => {
            let net = built.network()?;
            let noise = if cfg.method == Method::Flipout {
                NoiseMethod::Flipout
            } else {
                NoiseMethod::LocalReparam
            };
            network_vi_fit(&net.spec, &net.data, &net.prior, noise, init, &bbb, &mut rng)?
        }
        other => unreachable!("{} is not a Gaussian VI method", other.name()),
    };
    let elbo = elbo_estimate(&fit.q, built.density(), cfg.vi.elbo_samples, &mut rng)?;
    out.json(
        "variational.json",
        &json!({
            "method": cfg.method.name(),
            "mu": fit.q.mu,
            "sigma": fit.q.sigma(),
            "elbo_trace": fit.elbo_trace,
            "skipped_steps": fit.skipped,
        }),
    );
    out.json(
        "stats.json",
        &json!({
            "final_elbo": elbo.value,
            "final_elbo_std_error": elbo.std_error,
            "skipped_steps": fit.skipped,
        }),
    );
    Ok(())
}

fn matrix_rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn run_dropout(cfg: &ExperimentConfig, built: &Built, out: &mut Outputs) -> Result<(), CliError> {
    let net = built.network()?;
    let v = &cfg.vi;
    let kind = match v.dropout_kind {
        Some(DropoutKindName::Bernoulli) => DropoutKind::Bernoulli,
        Some(DropoutKindName::Gaussian) => DropoutKind::Gaussian,
        None if cfg.method == Method::VariationalDropout => DropoutKind::Gaussian,
        None => DropoutKind::Bernoulli,
    };
    let n_hidden = net.spec.n_layers() - 1;
    let default_rate = match kind {
        DropoutKind::Bernoulli => 0.9,
        DropoutKind::Gaussian => 0.1,
    };
    let dropout = DropoutSpec {
        kind,
        rates: v.dropout_rates.clone().unwrap_or_else(|| vec![default_rate; n_hidden]),
        n_mc: v.n_mc,
    };
    let train = DropoutTrainConfig {
        learning_rate: v.learning_rate,
        iterations: v.iterations,
        l2: v.l2,
        minibatch: net.data.minibatch,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = base_init(cfg, built)?;
    let fit = dropout_fit(&net.spec, &net.data, &dropout, init, &train, &mut rng)?;
    let pred = mc_dropout_predict(&net.spec, &fit.params, &dropout, &net.data.inputs, v.passes, &mut rng)?;
    out.json(
        "variational.json",
        &json!({
            "method": cfg.method.name(),
            "dropout_kind": kind.name(),
            "dropout_rates": dropout.rates,
            "params": fit.params,
            "loss_trace": fit.loss_trace,
            "predictive_mean": matrix_rows(&pred.mean),
            "predictive_std": matrix_rows(&pred.spread()),
        }),
    );
    out.json("stats.json", &json!({ "final_loss": fit.loss_trace.last() }));
    Ok(())
}

fn run_cavi(cfg: &ExperimentConfig, built: &Built, out: &mut Outputs) -> Result<(), CliError> {
    let Built::Analytic(target) = built else {
        return Err(CliError::Validation("cavi needs an analytic target".into()));
    };
    let v = &cfg.vi;
    let d = target.dim();
    let (centre, half): (Vec<f64>, Vec<f64>) = match target {
        AnalyticTarget::Gaussian(g) => (
            g.mean().to_vec(),
            (0..d).map(|i| 6.0 * g.cov()[(i, i)].sqrt()).collect(),
        ),
        _ => (vec![0.0; d], vec![6.0; d]),
    };
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let lo = v.grid_lower.as_ref().map_or(centre[j] - half[j], |l| l[j]);
            let hi = v.grid_upper.as_ref().map_or(centre[j] + half[j], |u| u[j]);
            let n = v.grid_points;
            (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
        })
        .collect();
    let grid = GridTarget::tabulate(axes, |x| target.log_density(x).unwrap_or(f64::NEG_INFINITY))?;
    let fit = cavi_fit(&grid, v.max_sweeps, v.tolerance)?;
    let factors: Vec<Value> = fit
        .factors
        .iter()
        .map(|f| json!({ "axis": f.axes[0], "probs": f.probs(), "mean": f.mean(0), "variance": f.variance(0) }))
        .collect();
    out.json(
        "variational.json",
        &json!({ "method": "cavi", "factors": factors, "elbo_trace": fit.elbo_trace }),
    );
    out.json(
        "stats.json",
        &json!({ "final_elbo": fit.elbo_trace.last(), "sweeps": fit.elbo_trace.len() - 1 }),
    );
    Ok(())
}

/// Validates, computes, then writes every artifact plus `manifest.json`.
/// Nothing is written when the computation fails.
pub fn run_experiment(cfg: &ExperimentConfig, output_dir: &Path) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let config_sha256 = config_hash(cfg)?;
    let built = build_target(cfg)?;
    let mut out = Outputs { files: Vec::new() };
    match cfg.method {
        m if m.is_mcmc() => run_mcmc(cfg, &built, &mut out)?,
        Method::Neutra => run_neutra(cfg, &built, &mut out)?,
        Method::Cavi => run_cavi(cfg, &built, &mut out)?,
        Method::Bbb | Method::LocalReparam | Method::Flipout => run_gaussian_vi(cfg, &built, &mut out)?,
        Method::VariationalDropout | Method::McDropout => run_dropout(cfg, &built, &mut out)?,
        _ => unreachable!(),
    }

    std::fs::create_dir_all(output_dir).map_err(|e| CliError::io(output_dir, e))?;
    let mut files = Vec::with_capacity(out.files.len());
    for (name, bytes) in &out.files {
        let path = output_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        files.push(FileEntry {
            name: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
    }
    let manifest = Manifest {
        method: cfg.method.name().to_string(),
        seed: cfg.seed,
        config_sha256,
        files,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    bytes.push(b'\n');
    let path = output_dir.join("manifest.json");
    std::fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(RunSummary {
        output_dir: output_dir.to_path_buf(),
        manifest,
        manifest_sha256: sha256_hex(&bytes),
    })
}
