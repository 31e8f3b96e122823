//! Neutra: HMC in the latent space of a fitted diagonal-affine bijector.

use rand::Rng;

use crate::error::{ModelError, ViError};
use crate::linalg::Matrix;
use crate::mcmc::{run_chain, Chain, Sampler};
use crate::models::target::LogDensity;
use crate::scalar::Scalar;

/// `g(ε) = a + exp(b) ∘ ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct BijectorSpec<S> {
    pub shift: Vec<S>,
    pub log_scale: Vec<S>,
    pub trained: bool,
}

impl<S: Scalar> BijectorSpec<S> {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![S::zero(); dim],
            log_scale: vec![S::zero(); dim],
            trained: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn forward(&self, eps: &[S]) -> Vec<S> {
        eps.iter()
            .zip(&self.shift)
            .zip(&self.log_scale)
            .map(|((&e, &a), &b)| a + b.exp() * e)
            .collect()
    }

    pub fn inverse(&self, lambda: &[S]) -> Vec<S> {
        lambda
            .iter()
            .zip(&self.shift)
            .zip(&self.log_scale)
            .map(|((&l, &a), &b)| (l - a) / b.exp())
            .collect()
    }

    /// `log |det ∂g/∂ε| = Σ b`.
    pub fn log_det_jacobian(&self) -> S {
        self.log_scale.iter().copied().sum()
    }
}

/// `log ϱ(g(ε)) + Σ b` as a density over `ε`.
pub struct PulledBack<'a, S, T: ?Sized> {
    pub target: &'a T,
    pub bijector: &'a BijectorSpec<S>,
}

impl<S: Scalar, T: LogDensity<S> + ?Sized> LogDensity<S> for PulledBack<'_, S, T> {
    fn dim(&self) -> usize {
        self.bijector.dim()
    }

    fn log_density_and_grad(&self, eps: &[S]) -> Result<(S, Vec<S>), ModelError> {
        let lambda = self.bijector.forward(eps);
        let (lp, g) = self.target.log_density_and_grad(&lambda)?;
        let grad = g
            .iter()
            .zip(&self.bijector.log_scale)
            .map(|(&gi, &b)| gi * b.exp())
            .collect();
        Ok((lp + self.bijector.log_det_jacobian(), grad))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeutraFitConfig {
    pub iterations: usize,
    /// Antithetic pairs per gradient estimate.
    pub n_mc: usize,
    pub learning_rate: f64,
}

impl Default for NeutraFitConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            n_mc: 16,
            learning_rate: 0.05,
        }
    }
}

impl NeutraFitConfig {
    pub fn validate(&self) -> Result<(), ViError> {
        if self.n_mc == 0 || self.iterations == 0 {
            return Err(ViError::Config("neutra fit needs iterations ≥ 1 and n_mc ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ViError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeutraFit<S> {
    pub bijector: BijectorSpec<S>,
    pub elbo_trace: Vec<S>,
    pub grad_evals: usize,
}

/// Maximises `E_ε[log ϱ(g(ε))] + Σ b` with Adam under a linearly decaying
/// rate, reporting the average of the second-half iterates.
pub fn neutra_fit<S: Scalar, T: LogDensity<S> + ?Sized, R: Rng + ?Sized>(
    init: BijectorSpec<S>,
    target: &T,
    cfg: &NeutraFitConfig,
    rng: &mut R,
) -> Result<NeutraFit<S>, ViError> {
    cfg.validate()?;
    let d = init.dim();
    if target.dim() != d {
        return Err(ViError::Precondition(format!(
            "target has dimension {}, bijector {d}",
            target.dim()
        )));
    }
    let (b1, b2, tiny) = (0.9, 0.999, 1e-8);
    let mut theta: Vec<f64> = init
        .shift
        .iter()
        .chain(&init.log_scale)
        .map(|v| v.to_f64_lossy())
        .collect();
    let mut m = vec![0.0; 2 * d];
    let mut v = vec![0.0; 2 * d];
    let mut avg = vec![0.0; 2 * d];
    let mut n_avg = 0usize;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let bij = BijectorSpec {
            shift: theta[..d].iter().map(|&x| S::lit(x)).collect(),
            log_scale: theta[d..].iter().map(|&x| S::lit(x)).collect(),
            trained: false,
        };
        let mut grad = vec![0.0; 2 * d];
        let mut value = bij.log_det_jacobian().to_f64_lossy();
        let mut eps: Vec<S> = Vec::new();
        // Antithetic pairs: each draw is used as both ε and −ε.
        let n_eval = 2 * cfg.n_mc;
        for k in 0..n_eval {
            if k % 2 == 0 {
                eps = (0..d).map(|_| S::std_normal(rng)).collect();
            } else {
                eps.iter_mut().for_each(|e| *e = -*e);
            }
            let (lp, g) = match target.log_density_and_grad(&bij.forward(&eps)) {
                Ok(r) => r,
                Err(ModelError::Autodiff(_)) => (S::nan(), vec![S::nan(); d]),
                Err(e) => return Err(e.into()),
            };
            value += lp.to_f64_lossy() / n_eval as f64;
            for i in 0..d {
                let gi = g[i].to_f64_lossy() / n_eval as f64;
                grad[i] += gi;
                grad[d + i] += gi * theta[d + i].exp() * eps[i].to_f64_lossy();
            }
        }
        for g in &mut grad[d..] {
            *g += 1.0;
        }
        trace.push(S::lit(value));
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ViError::FitDiverged {
                iteration: it,
                trace: trace.iter().map(|v| v.to_f64_lossy()).collect(),
            });
        }
        let t = (it + 1) as i32;
        let lr = cfg.learning_rate * (1.0 - it as f64 / cfg.iterations as f64);
        for i in 0..2 * d {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            theta[i] += lr * mh / (vh.sqrt() + tiny);
        }
        if it >= cfg.iterations / 2 {
            avg.iter_mut().zip(&theta).for_each(|(a, t)| *a += t);
            n_avg += 1;
        }
    }
    let theta: Vec<f64> = avg.iter().map(|a| a / n_avg as f64).collect();
    Ok(NeutraFit {
        bijector: BijectorSpec {
            shift: theta[..d].iter().map(|&x| S::lit(x)).collect(),
            log_scale: theta[d..].iter().map(|&x| S::lit(x)).collect(),
            trained: true,
        },
        elbo_trace: trace,
        grad_evals: 2 * cfg.iterations * cfg.n_mc,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeutraRun<S> {
    pub fit: NeutraFit<S>,
    /// Draws pushed forward to the target space.
    pub chain: Chain<S>,
}

/// Fits the bijector (unless already trained), runs `sampler` on the
/// pulled-back density from `ε = 0` and maps the draws through `g`.
#[allow(clippy::too_many_arguments)]
pub fn neutra_fit_and_sample<S: Scalar, T: LogDensity<S> + ?Sized, R: Rng + ?Sized>(
    bijector: BijectorSpec<S>,
    target: &T,
    fit_cfg: &NeutraFitConfig,
    sampler: &Sampler<S>,
    n_total: usize,
    burn_in: usize,
    seed: u64,
    rng: &mut R,
) -> Result<NeutraRun<S>, ViError> {
    let fit = if bijector.trained {
        NeutraFit {
            bijector,
            elbo_trace: Vec::new(),
            grad_evals: 0,
        }
    } else {
        neutra_fit(bijector, target, fit_cfg, rng)?
    };
    let pulled = PulledBack {
        target,
        bijector: &fit.bijector,
    };
    let d = fit.bijector.dim();
    let mut chain = run_chain(sampler, &pulled, &vec![S::zero(); d], n_total, burn_in, seed)?;
    let mut pushed = Matrix::zeros(chain.n_kept(), d);
    for (i, row) in chain.samples.iter_rows().enumerate() {
        pushed.row_mut(i).copy_from_slice(&fit.bijector.forward(row));
    }
    chain.samples = pushed;
    Ok(NeutraRun { fit, chain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{Kernel, KernelConfig};
    use crate::models::target::{AnalyticTarget, GaussianTarget};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bijector_round_trip() {
        let b = BijectorSpec::<f64> {
            shift: vec![1.0, -2.0],
            log_scale: vec![0.5, -1.0],
            trained: true,
        };
        let e = [0.3, -0.7];
        let back = b.inverse(&b.forward(&e));
        assert!(back.iter().zip(e).all(|(x, y)| (x - y).abs() < 1e-14));
        assert_eq!(b.log_det_jacobian(), -0.5);
    }

    #[test]
    fn fit_recovers_diagonal_gaussian() {
        let t = AnalyticTarget::Gaussian(GaussianTarget::<f64>::diagonal(vec![3.0, -1.0], &[4.0, 0.25]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = neutra_fit(BijectorSpec::identity(2), &t, &NeutraFitConfig::default(), &mut rng).unwrap();
        let s = [2.0f64, 0.5];
        for i in 0..2 {
            assert!(
                (fit.bijector.shift[i] - [3.0, -1.0][i]).abs() <= 0.01 * s[i],
                "{:?}",
                fit.bijector
            );
            assert!(
                (fit.bijector.log_scale[i] - s[i].ln()).abs() <= 0.01,
                "{:?}",
                fit.bijector
            );
        }
    }

    #[test]
    fn pulled_back_density_is_standard_normal_at_optimum() {
        let t = AnalyticTarget::Gaussian(GaussianTarget::<f64>::diagonal(vec![3.0], &[4.0]).unwrap());
        let b = BijectorSpec {
            shift: vec![3.0],
            log_scale: vec![2f64.ln()],
            trained: true,
        };
        let p = PulledBack {
            target: &t,
            bijector: &b,
        };
        let (l0, g0) = p.log_density_and_grad(&[0.0]).unwrap();
        let (l1, _) = p.log_density_and_grad(&[1.0]).unwrap();
        assert!((l0 - l1 - 0.5).abs() < 1e-12);
        assert!(g0[0].abs() < 1e-12);
    }

    #[test]
    fn identity_bijector_equals_direct_hmc() {
        let t = AnalyticTarget::Gaussian(GaussianTarget::<f64>::diagonal(vec![0.5], &[2.0]).unwrap());
        let cfg = KernelConfig {
            step_size: 0.3,
            adapt_step_size: false,
            ..KernelConfig::default()
        };
        let sampler = Sampler::new(Kernel::Hmc, cfg);
        let direct = run_chain(&sampler, &t, &[0.0], 500, 100, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = BijectorSpec::identity(1);
        b.trained = true;
        let run = neutra_fit_and_sample(b, &t, &NeutraFitConfig::default(), &sampler, 500, 100, 11, &mut rng).unwrap();
        assert_eq!(run.chain.samples, direct.samples);
    }

    #[test]
    fn diverging_fit_reports_trace() {
        let t = crate::models::target::FnDensity::new(1, |x: &[f64]| Ok((-x[0].exp(), vec![f64::INFINITY])));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = neutra_fit(BijectorSpec::identity(1), &t, &NeutraFitConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, ViError::FitDiverged { iteration: 0, .. }));
    }
}
