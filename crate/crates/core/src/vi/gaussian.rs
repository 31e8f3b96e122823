//! Mean-field Gaussian family, ELBO estimation and Bayes by Backprop.

use rand::Rng;

use crate::error::{ModelError, ViError};
use crate::models::data::{MinibatchSchedule, MinibatchStream};
use crate::models::target::LogDensity;
use crate::scalar::{sigmoid, softplus, softplus_inv, Scalar};

/// Value and gradient of a log density.
pub type LogTargetResult<S> = Result<(S, Vec<S>), ModelError>;

/// `q(w) = Π N(w_i; μ_i, σ_i²)` with `σ = softplus(σ_raw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldGaussian<S> {
    pub mu: Vec<S>,
    pub sigma_raw: Vec<S>,
}

impl<S: Scalar> MeanFieldGaussian<S> {
    pub fn new(mu: Vec<S>, sigma: &[S]) -> Result<Self, ViError> {
        if mu.len() != sigma.len() {
            return Err(ViError::Config(format!(
                "{} means but {} scales",
                mu.len(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|&s| !(s > S::zero())) {
            return Err(ViError::Config("scales must be positive".into()));
        }
        Ok(Self {
            mu,
            sigma_raw: sigma.iter().map(|&s| softplus_inv(s)).collect(),
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![S::zero(); dim], &vec![S::one(); dim]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<S> {
        self.sigma_raw.iter().map(|&r| softplus(r)).collect()
    }

    pub fn variance(&self) -> Vec<S> {
        self.sigma().into_iter().map(|s| s * s).collect()
    }

    /// `Σ log σ_i + (d/2)(1 + log 2π)`.
    pub fn entropy(&self) -> S {
        let c = S::lit(0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()));
        self.sigma().into_iter().map(|s| s.ln() + c).sum()
    }

    pub fn log_density(&self, w: &[S]) -> S {
        let c = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        w.iter()
            .zip(&self.mu)
            .zip(self.sigma())
            .map(|((&w, &m), s)| {
                let z = (w - m) / s;
                -S::lit(0.5) * z * z - s.ln() - c
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let eps: Vec<S> = (0..self.dim()).map(|_| S::std_normal(rng)).collect();
        reparam_sample(self, &eps)
    }
}

/// `w = μ + σ ∘ ε`.
pub fn reparam_sample<S: Scalar>(q: &MeanFieldGaussian<S>, eps: &[S]) -> Vec<S> {
    assert_eq!(eps.len(), q.dim(), "noise length must match the family");
    q.mu.iter()
        .zip(q.sigma())
        .zip(eps)
        .map(|((&m, s), &e)| m + s * e)
        .collect()
}

/// Closed-form `KL(p ‖ q)` between diagonal Gaussians.
pub fn kl_gaussian<S: Scalar>(p: &MeanFieldGaussian<S>, q: &MeanFieldGaussian<S>) -> Result<S, ViError> {
    if p.dim() != q.dim() {
        return Err(ViError::Precondition(format!(
            "dimensions {} and {} differ",
            p.dim(),
            q.dim()
        )));
    }
    let half = S::lit(0.5);
    let kl =
        p.mu.iter()
            .zip(p.sigma())
            .zip(q.mu.iter().zip(q.sigma()))
            .map(|((&m1, s1), (&m2, s2))| {
                let r = (s1 / s2) * (s1 / s2);
                let d = (m1 - m2) / s2;
                half * (r + d * d - S::one() - r.ln())
            })
            .sum::<S>();
    Ok(kl.max(S::zero()))
}

/// Monte Carlo ELBO with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboEstimate<S> {
    pub value: S,
    pub std_error: S,
}

/// `E_q[log ϱ(w)] + H(q)` with the entropy in closed form.
pub fn elbo_estimate<S: Scalar, T: LogDensity<S> + ?Sized, R: Rng + ?Sized>(
    q: &MeanFieldGaussian<S>,
    target: &T,
    n_mc: usize,
    rng: &mut R,
) -> Result<ElboEstimate<S>, ViError> {
    if n_mc == 0 {
        return Err(ViError::Config("n_mc must be at least 1".into()));
    }
    if target.dim() != q.dim() {
        return Err(ViError::Precondition(format!(
            "target has dimension {}, family {}",
            target.dim(),
            q.dim()
        )));
    }
    let vals: Vec<S> = (0..n_mc)
        .map(|_| target.log_density(&q.sample(rng)))
        .collect::<Result<_, _>>()?;
    let n = S::from_usize(n_mc).unwrap();
    let mean = vals.iter().copied().sum::<S>() / n;
    let std_error = if n_mc > 1 {
        let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / (n - S::one());
        (var / n).sqrt()
    } else {
        S::infinity()
    };
    Ok(ElboEstimate {
        value: mean + q.entropy(),
        std_error,
    })
}

/// Reparameterised ELBO gradient with respect to `(μ, σ_raw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboGradient<S> {
    pub value: S,
    pub d_mu: Vec<S>,
    pub d_sigma_raw: Vec<S>,
}

/// Gradient for fixed noise draws `eps`. `log_target` returns `log ϱ(w)` and
/// `∇_w log ϱ(w)`.
pub fn elbo_gradient_with<S, F>(
    q: &MeanFieldGaussian<S>,
    eps: &[Vec<S>],
    mut log_target: F,
) -> Result<ElboGradient<S>, ModelError>
where
    S: Scalar,
    F: FnMut(&[S]) -> Result<(S, Vec<S>), ModelError>,
{
    let d = q.dim();
    let sigma = q.sigma();
    let dsig: Vec<S> = q.sigma_raw.iter().map(|&r| sigmoid(r)).collect();
    let n = S::from_usize(eps.len()).unwrap();
    let mut out = ElboGradient {
        value: q.entropy(),
        d_mu: vec![S::zero(); d],
        d_sigma_raw: vec![S::zero(); d],
    };
    for e in eps {
        let w = reparam_sample(q, e);
        let (lp, g) = log_target(&w)?;
        out.value = out.value + lp / n;
        for i in 0..d {
            out.d_mu[i] = out.d_mu[i] + g[i] / n;
            out.d_sigma_raw[i] = out.d_sigma_raw[i] + g[i] * e[i] * dsig[i] / n;
        }
    }
    for i in 0..d {
        out.d_sigma_raw[i] = out.d_sigma_raw[i] + dsig[i] / sigma[i];
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BbbStep<S> {
    pub elbo: S,
    /// The gradient was not finite and the parameters were left unchanged.
    pub skipped: bool,
}

fn target_fn<'a, S: Scalar, T: LogDensity<S> + ?Sized>(
    target: &'a T,
    batch: Option<&'a [usize]>,
) -> Result<impl FnMut(&[S]) -> LogTargetResult<S> + 'a, ViError> {
    let model =
        match batch {
            Some(_) => Some(target.as_model().ok_or_else(|| {
                ViError::Config("minibatch updates need a target with a likelihood/prior split".into())
            })?),
            None => None,
        };
    Ok(move |w: &[S]| match (model, batch) {
        (Some(m), Some(rows)) => {
            let scale = S::from_usize(m.n_data()).unwrap() / S::from_usize(rows.len()).unwrap();
            let (lp, gp) = m.log_prior_and_grad(w);
            let (ll, gl) = m.log_likelihood_and_grad(w, Some(rows))?;
            Ok((
                scale * ll + lp,
                gl.iter().zip(&gp).map(|(&a, &b)| scale * a + b).collect(),
            ))
        }
        _ => target.log_density_and_grad(w),
    })
}

/// One stochastic gradient ascent step on the ELBO: `m ← m + η ∂_m ELBO`.
pub fn bbb_step<S: Scalar, T: LogDensity<S> + ?Sized, R: Rng + ?Sized>(
    q: &mut MeanFieldGaussian<S>,
    target: &T,
    batch: Option<&[usize]>,
    n_mc: usize,
    learning_rate: S,
    rng: &mut R,
) -> Result<BbbStep<S>, ViError> {
    let grad = bbb_gradient(q, target, batch, n_mc, rng)?;
    let Some(g) = grad else {
        return Ok(BbbStep {
            elbo: S::nan(),
            skipped: true,
        });
    };
    for i in 0..q.dim() {
        q.mu[i] = q.mu[i] + learning_rate * g.d_mu[i];
        q.sigma_raw[i] = q.sigma_raw[i] + learning_rate * g.d_sigma_raw[i];
    }
    Ok(BbbStep {
        elbo: g.value,
        skipped: false,
    })
}

/// `None` when the gradient is not finite.
fn bbb_gradient<S: Scalar, T: LogDensity<S> + ?Sized, R: Rng + ?Sized>(
    q: &MeanFieldGaussian<S>,
    target: &T,
    batch: Option<&[usize]>,
    n_mc: usize,
    rng: &mut R,
) -> Result<Option<ElboGradient<S>>, ViError> {
    if n_mc == 0 {
        return Err(ViError::Config("n_mc must be at least 1".into()));
    }
    if target.dim() != q.dim() {
        return Err(ViError::Precondition(format!(
            "target has dimension {}, family {}",
            target.dim(),
            q.dim()
        )));
    }
    let eps: Vec<Vec<S>> = (0..n_mc)
        .map(|_| (0..q.dim()).map(|_| S::std_normal(rng)).collect())
        .collect();
    match elbo_gradient_with(q, &eps, target_fn(target, batch)?) {
        Ok(g) if g.value.is_finite() && g.d_mu.iter().chain(&g.d_sigma_raw).all(|v| v.is_finite()) => Ok(Some(g)),
        Ok(_) | Err(ModelError::Autodiff(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BbbConfig {
    pub learning_rate: f64,
    pub n_mc: usize,
    pub iterations: usize,
    /// Heavy-ball coefficient; 0 gives plain SGD.
    pub momentum: f64,
    pub minibatch: Option<MinibatchSchedule>,
    /// Report the average of the second-half iterates instead of the last one.
    pub average_tail: bool,
}

impl Default for BbbConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            n_mc: 8,
            iterations: 2000,
            momentum: 0.0,
            minibatch: None,
            average_tail: true,
        }
    }
}

impl BbbConfig {
    pub fn validate(&self) -> Result<(), ViError> {
        if !(self.learning_rate > 0.0) {
            return Err(ViError::Config("learning rate must be positive".into()));
        }
        if self.n_mc == 0 {
            return Err(ViError::Config("n_mc must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ViError::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BbbFit<S> {
    pub q: MeanFieldGaussian<S>,
    pub elbo_trace: Vec<S>,
    pub skipped: usize,
}

pub fn bbb_fit<S: Scalar, T: LogDensity<S> + ?Sized, R: Rng + ?Sized>(
    init: MeanFieldGaussian<S>,
    target: &T,
    cfg: &BbbConfig,
    rng: &mut R,
) -> Result<BbbFit<S>, ViError> {
    let n_data = match cfg.minibatch {
        Some(_) => Some(
            target
                .as_model()
                .ok_or_else(|| ViError::Config("minibatch schedule needs a model with data".into()))?
                .n_data(),
        ),
        None => None,
    };
    let n_mc = cfg.n_mc;
    stochastic_ascent(init, cfg, n_data, rng, |q, batch, rng| {
        bbb_gradient(q, target, batch, n_mc, rng)
    })
}

/// Ascends the ELBO with heavy-ball SGD, given a gradient oracle that returns
/// `None` for a non-finite gradient.
pub(crate) fn stochastic_ascent<S, R, G>(
    init: MeanFieldGaussian<S>,
    cfg: &BbbConfig,
    n_data: Option<usize>,
    rng: &mut R,
    mut gradient: G,
) -> Result<BbbFit<S>, ViError>
where
    S: Scalar,
    R: Rng + ?Sized,
    G: FnMut(&MeanFieldGaussian<S>, Option<&[usize]>, &mut R) -> Result<Option<ElboGradient<S>>, ViError>,
{
    cfg.validate()?;
    let mut stream = match (cfg.minibatch, n_data) {
        (Some(s), Some(n)) => {
            if s.size == 0 || s.size > n {
                return Err(ViError::Config(format!("minibatch size {} not in 1..={n}", s.size)));
            }
            Some(MinibatchStream::new(n, s))
        }
        _ => None,
    };
    let d = init.dim();
    let lr = S::lit(cfg.learning_rate);
    let beta = S::lit(cfg.momentum);
    let mut q = init;
    let mut vel = vec![S::zero(); 2 * d];
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut skipped = 0;
    let tail_start = cfg.iterations / 2;
    let mut avg = vec![S::zero(); 2 * d];
    let mut n_avg = 0usize;
    for it in 0..cfg.iterations {
        let batch = stream.as_mut().map(|s| s.next_batch().to_vec());
        match gradient(&q, batch.as_deref(), rng)? {
            Some(g) => {
                for (i, v) in vel.iter_mut().enumerate() {
                    let gi = if i < d { g.d_mu[i] } else { g.d_sigma_raw[i - d] };
                    *v = beta * *v + gi;
                }
                for i in 0..d {
                    q.mu[i] = q.mu[i] + lr * vel[i];
                    q.sigma_raw[i] = q.sigma_raw[i] + lr * vel[d + i];
                }
                trace.push(g.value);
            }
            None => {
                skipped += 1;
                trace.push(S::nan());
            }
        }
        if cfg.average_tail && it >= tail_start {
            for i in 0..d {
                avg[i] = avg[i] + q.mu[i];
                avg[d + i] = avg[d + i] + q.sigma_raw[i];
            }
            n_avg += 1;
        }
    }
    if n_avg > 0 {
        let n = S::from_usize(n_avg).unwrap();
        q.mu = avg[..d].iter().map(|&v| v / n).collect();
        q.sigma_raw = avg[d..].iter().map(|&v| v / n).collect();
    }
    Ok(BbbFit {
        q,
        elbo_trace: trace,
        skipped,
    })
}
