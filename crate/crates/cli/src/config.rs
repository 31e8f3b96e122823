//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mh,
    Hmc,
    Nuts,
    Qnhmc,
    Rmhmc,
    Sghmc,
    Cavi,
    Bbb,
    LocalReparam,
    VariationalDropout,
    McDropout,
    Flipout,
    Neutra,
}

impl Method {
    pub fn is_mcmc(self) -> bool {
        matches!(
            self,
            Method::Mh | Method::Hmc | Method::Nuts | Method::Qnhmc | Method::Rmhmc | Method::Sghmc
        )
    }

    /// Methods defined only for network weights.
    pub fn needs_network(self) -> bool {
        matches!(
            self,
            Method::Sghmc | Method::LocalReparam | Method::VariationalDropout | Method::McDropout | Method::Flipout
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Mh => "mh",
            Method::Hmc => "hmc",
            Method::Nuts => "nuts",
            Method::Qnhmc => "qnhmc",
            Method::Rmhmc => "rmhmc",
            Method::Sghmc => "sghmc",
            Method::Cavi => "cavi",
            Method::Bbb => "bbb",
            Method::LocalReparam => "local-reparam",
            Method::VariationalDropout => "variational-dropout",
            Method::McDropout => "mc-dropout",
            Method::Flipout => "flipout",
            Method::Neutra => "neutra",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationName {
    Tanh,
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadName {
    UnitGaussian,
    HeteroscedasticGaussian,
    Categorical,
    Binomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetConfig {
    /// Identity covariance unless `cov` or `variances` is given.
    Gaussian {
        mean: Vec<f64>,
        #[serde(default)]
        cov: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        variances: Option<Vec<f64>>,
    },
    Banana {
        a: f64,
        b: f64,
    },
    Funnel {
        dim: usize,
    },
    Mlp {
        dataset: PathBuf,
        widths: Vec<usize>,
        #[serde(default)]
        activations: Vec<ActivationName>,
        head: HeadName,
        #[serde(default)]
        classes: Option<usize>,
        #[serde(default)]
        trials: Option<u32>,
        #[serde(default = "default_prior_sigma")]
        prior_sigma: f64,
        /// `[lower, upper]` of a uniform prior, replacing the Gaussian one.
        #[serde(default)]
        prior_uniform: Option<[f64; 2]>,
        #[serde(default)]
        minibatch_size: Option<usize>,
        #[serde(default)]
        shuffle_seed: Option<u64>,
    },
}

fn default_prior_sigma() -> f64 {
    1.0
}

impl TargetConfig {
    pub fn dim_hint(&self) -> Option<usize> {
        match self {
            TargetConfig::Gaussian { mean, .. } => Some(mean.len()),
            TargetConfig::Banana { .. } => Some(2),
            TargetConfig::Funnel { dim } => Some(*dim),
            TargetConfig::Mlp { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerName {
    SqrtInverseHessian,
    InverseHessian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricName {
    Fisher,
    Identity,
    GradientOuterProduct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub chains: usize,
    /// Kept draws per chain.
    pub samples: usize,
    pub burn_in: usize,
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub target_accept: f64,
    pub adapt_step_size: bool,
    pub adapt_mass: bool,
    pub max_tree_depth: usize,
    pub step_jitter: f64,
    pub proposal_sd: Option<Vec<f64>>,
    pub friction: f64,
    pub qnhmc_memory: usize,
    pub preconditioner: PreconditionerName,
    pub metric: MetricName,
    pub metric_window: usize,
    pub init: Option<Vec<f64>>,
    /// Standard deviation of the per-chain jitter added to the start point.
    pub init_jitter: f64,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self {
            chains: 4,
            samples: 1000,
            burn_in: 1000,
            step_size: 0.1,
            n_leapfrog: 10,
            target_accept: 0.65,
            adapt_step_size: true,
            adapt_mass: false,
            max_tree_depth: 10,
            step_jitter: 0.1,
            proposal_sd: None,
            friction: 1.0,
            qnhmc_memory: 10,
            preconditioner: PreconditionerName::SqrtInverseHessian,
            metric: MetricName::Fisher,
            metric_window: 50,
            init: None,
            init_jitter: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutKindName {
    Bernoulli,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub n_mc: usize,
    pub momentum: f64,
    pub average_tail: bool,
    /// Draws for the final ELBO estimate.
    pub elbo_samples: usize,
    pub init_sigma: f64,
    /// Gaussian for variational dropout, Bernoulli for MC dropout unless set.
    pub dropout_kind: Option<DropoutKindName>,
    /// One rate per hidden layer; keep rate for Bernoulli, variance for Gaussian.
    pub dropout_rates: Option<Vec<f64>>,
    pub l2: f64,
    /// Forward passes for the MC dropout predictive.
    pub passes: usize,
    pub grid_points: usize,
    pub grid_lower: Option<Vec<f64>>,
    pub grid_upper: Option<Vec<f64>>,
    pub max_sweeps: usize,
    pub tolerance: f64,
    pub neutra_fit_iterations: usize,
    pub neutra_fit_n_mc: usize,
    pub neutra_learning_rate: f64,
}

impl Default for ViSection {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 0.01,
            n_mc: 8,
            momentum: 0.0,
            average_tail: true,
            elbo_samples: 1000,
            init_sigma: 0.1,
            dropout_kind: None,
            dropout_rates: None,
            l2: 1e-4,
            passes: 50,
            grid_points: 101,
            grid_lower: None,
            grid_upper: None,
            max_sweeps: 200,
            tolerance: 1e-12,
            neutra_fit_iterations: 3000,
            neutra_fit_n_mc: 16,
            neutra_learning_rate: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub target: TargetConfig,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub vi: ViSection,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    /// Reads and validates a config; a relative dataset path is resolved
    /// against the config's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let TargetConfig::Mlp { dataset, .. } = &mut cfg.target {
            if dataset.is_relative() {
                *dataset = path.parent().unwrap_or(Path::new(".")).join(&*dataset);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without running the method.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = self.method;
        let is_net = matches!(self.target, TargetConfig::Mlp { .. });
        if m.needs_network() && !is_net {
            return Err(invalid(format!("method {} needs an mlp target", m.name())));
        }
        match &self.target {
            TargetConfig::Gaussian { mean, cov, variances } => {
                if mean.is_empty() {
                    return Err(invalid("gaussian target needs a non-empty mean"));
                }
                if cov.is_some() && variances.is_some() {
                    return Err(invalid("give either cov or variances, not both"));
                }
                if let Some(c) = cov {
                    if c.len() != mean.len() || c.iter().any(|r| r.len() != mean.len()) {
                        return Err(invalid("cov must be a square matrix matching the mean"));
                    }
                }
                if let Some(v) = variances {
                    if v.len() != mean.len() || v.iter().any(|&x| !(x > 0.0)) {
                        return Err(invalid("variances must be positive, one per dimension"));
                    }
                }
            }
            TargetConfig::Banana { a, .. } => {
                if !(*a > 0.0) {
                    return Err(invalid("banana a must be positive"));
                }
            }
            TargetConfig::Funnel { dim } => {
                if *dim < 2 {
                    return Err(invalid("funnel needs dim ≥ 2"));
                }
            }
            TargetConfig::Mlp {
                dataset,
                head,
                classes,
                trials,
                minibatch_size,
                prior_uniform,
                ..
            } => {
                if !dataset.is_file() {
                    return Err(invalid(format!("dataset {} does not exist", dataset.display())));
                }
                if *head == HeadName::Categorical && classes.is_none() {
                    return Err(invalid("categorical head needs `classes`"));
                }
                if *head == HeadName::Binomial && trials.is_none() {
                    return Err(invalid("binomial head needs `trials`"));
                }
                if m == Method::Sghmc && minibatch_size.is_none() {
                    return Err(invalid("sghmc needs a minibatch schedule (target.minibatch_size)"));
                }
                if minibatch_size == &Some(0) {
                    return Err(invalid("minibatch_size must be at least 1"));
                }
                if matches!(m, Method::LocalReparam | Method::Flipout) && prior_uniform.is_some() {
                    return Err(invalid(format!("{} needs a Gaussian weight prior", m.name())));
                }
            }
        }
        if m == Method::Cavi {
            let d = self
                .target
                .dim_hint()
                .ok_or_else(|| invalid("cavi needs an analytic target"))?;
            if d > deskbayes::vi::grid::MAX_GRID_DIMS {
                return Err(invalid(format!(
                    "cavi grids support at most {} dimensions",
                    deskbayes::vi::grid::MAX_GRID_DIMS
                )));
            }
            let n = self.vi.grid_points;
            if !(2..=deskbayes::vi::grid::MAX_AXIS_POINTS).contains(&n) {
                return Err(invalid(format!(
                    "grid_points must lie in 2..={}",
                    deskbayes::vi::grid::MAX_AXIS_POINTS
                )));
            }
            for bound in [&self.vi.grid_lower, &self.vi.grid_upper].into_iter().flatten() {
                if bound.len() != d {
                    return Err(invalid("grid bounds need one entry per dimension"));
                }
            }
        }
        if m == Method::Rmhmc && self.mcmc.metric == MetricName::Fisher {
            let ok = matches!(self.target, TargetConfig::Gaussian { .. } | TargetConfig::Funnel { .. });
            if !ok {
                return Err(invalid(
                    "rmhmc with metric = \"fisher\" needs a gaussian or funnel target",
                ));
            }
        }
        if m.is_mcmc() || m == Method::Neutra {
            let s = &self.mcmc;
            if s.chains == 0 || s.samples == 0 {
                return Err(invalid("mcmc needs at least one chain and one kept sample"));
            }
            if !(s.init_jitter >= 0.0) {
                return Err(invalid("init_jitter must be non-negative"));
            }
            if let (Some(init), Some(d)) = (&s.init, self.target.dim_hint()) {
                if init.len() != d {
                    return Err(invalid(format!(
                        "init has {} entries, target dimension is {d}",
                        init.len()
                    )));
                }
            }
        }
        if !m.is_mcmc() && m != Method::Cavi {
            let v = &self.vi;
            if v.iterations == 0 || v.n_mc == 0 || !(v.learning_rate > 0.0) {
                return Err(invalid(
                    "vi needs iterations ≥ 1, n_mc ≥ 1 and a positive learning rate",
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::parse(
            r#"
seed = 1
method = "hmc"
[target]
kind = "gaussian"
mean = [0.0, 1.0]
"#,
        )
        .unwrap();
        assert_eq!(c.method, Method::Hmc);
        assert_eq!(c.mcmc.chains, 4);
        c.validate().unwrap();
    }

    #[test]
    fn seed_is_required() {
        assert!(ExperimentConfig::parse("method = \"hmc\"\n[target]\nkind = \"funnel\"\ndim = 3\n").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let r =
            ExperimentConfig::parse("seed = 1\nmethod = \"hmc\"\nbogus = 2\n[target]\nkind = \"funnel\"\ndim = 3\n");
        assert!(r.is_err());
    }

    #[test]
    fn network_method_needs_network() {
        let c =
            ExperimentConfig::parse("seed = 1\nmethod = \"flipout\"\n[target]\nkind = \"funnel\"\ndim = 3\n").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Validation(_))));
    }
}
