//! Stochastic-gradient HMC: Euler–Maruyama steps of
//! `λ̇ = M⁻¹ν`, `ν̇ = −∇Ṽ(λ) − Q M⁻¹ν + γ` with minibatch gradients and no
//! Metropolis correction.

use rand::Rng;

use crate::error::SamplerError;
use crate::linalg::Matrix;
use crate::mcmc::mass::MassMatrix;
use crate::mcmc::StepInfo;
use crate::models::BayesianModel;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SghmcConfig<S> {
    /// Friction `Q`.
    pub friction: Matrix<S>,
    /// Gradient-noise estimate `Σ̂`; zero when `None`.
    pub noise_estimate: Option<Matrix<S>>,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Inject `γ`. Off only for testing the noiseless limit.
    pub inject_noise: bool,
}

impl<S: Scalar> SghmcConfig<S> {
    pub fn isotropic(dim: usize, friction: f64, batch_size: usize, shuffle_seed: u64) -> Self {
        Self {
            friction: Matrix::identity(dim).scale(S::lit(friction)),
            noise_estimate: None,
            batch_size,
            shuffle_seed,
            inject_noise: true,
        }
    }

    /// Symmetric square root of `2Q − Σ̂`, or a configuration error when that
    /// matrix is not positive semidefinite.
    pub fn noise_factor(&self) -> Result<Matrix<S>, SamplerError> {
        let q = &self.friction;
        if !q.is_square() || !q.is_symmetric(S::lit(1e-12)) {
            return Err(SamplerError::Config(
                "friction must be a symmetric square matrix".into(),
            ));
        }
        let mut c = q.scale(S::lit(2.0));
        if let Some(sigma) = &self.noise_estimate {
            if sigma.rows() != q.rows() || !sigma.is_square() {
                return Err(SamplerError::Config("noise estimate does not match friction".into()));
            }
            c = c.sub(sigma);
        }
        let (vals, vecs) = c.symmetric_eigen()?;
        let scale = vals.iter().fold(S::zero(), |a, &v| a.max(v.abs()));
        if vals.iter().any(|&v| v < -S::lit(1e-12) * (scale + S::one())) {
            return Err(SamplerError::Config("2Q − Σ̂ is not positive semidefinite".into()));
        }
        let n = c.rows();
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let s = vals[k].max(S::zero()).sqrt();
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + vecs[(i, k)] * s * vecs[(j, k)];
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self, dim: usize, n_data: usize) -> Result<(), SamplerError> {
        if self.friction.rows() != dim {
            return Err(SamplerError::Config("friction dimension does not match target".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_data {
            return Err(SamplerError::Config(format!(
                "minibatch size {} not in 1..={n_data}",
                self.batch_size
            )));
        }
        self.noise_factor().map(|_| ())
    }
}

/// `λ` and the persistent momentum `ν`.
#[derive(Clone, Debug, PartialEq)]
pub struct SghmcState<S> {
    pub lambda: Vec<S>,
    pub nu: Vec<S>,
}

/// `∇Ṽ = −(N/|b|) Σ_{n∈b} ∇ log ℓ_n − ∇ log p`.
pub fn minibatch_grad_v<S: Scalar>(
    model: &dyn BayesianModel<S>,
    lambda: &[S],
    batch: &[usize],
) -> Result<Vec<S>, SamplerError> {
    let (_, gl) = model.log_likelihood_and_grad(lambda, Some(batch))?;
    let (_, gp) = model.log_prior_and_grad(lambda);
    let scale = S::from_usize(model.n_data()).unwrap() / S::from_usize(batch.len()).unwrap();
    Ok(gl.iter().zip(&gp).map(|(&l, &p)| -(scale * l + p)).collect())
}

/// One step: `λ ← λ + ε M⁻¹ν`, then
/// `ν ← ν − ε∇Ṽ(λ) − ε Q M⁻¹ν + N(0, ε(2Q − Σ̂))`.
#[allow(clippy::too_many_arguments)]
pub fn sghmc_step<S, R>(
    state: &mut SghmcState<S>,
    batch: &[usize],
    eps: S,
    mass: &MassMatrix<S>,
    cfg: &SghmcConfig<S>,
    noise_factor: &Matrix<S>,
    model: &dyn BayesianModel<S>,
    rng: &mut R,
) -> Result<StepInfo<S>, SamplerError>
where
    S: Scalar,
    R: Rng + ?Sized,
{
    let v = mass.inv_mul(&state.nu);
    state.lambda.iter_mut().zip(&v).for_each(|(l, &vi)| *l = *l + eps * vi);
    let g = minibatch_grad_v(model, &state.lambda, batch)?;
    let friction = cfg.friction.matvec(&mass.inv_mul(&state.nu));
    let noise = if cfg.inject_noise {
        let z: Vec<S> = (0..state.nu.len()).map(|_| S::std_normal(rng)).collect();
        noise_factor.matvec(&z).into_iter().map(|x| x * eps.sqrt()).collect()
    } else {
        vec![S::zero(); state.nu.len()]
    };
    for i in 0..state.nu.len() {
        state.nu[i] = state.nu[i] - eps * g[i] - eps * friction[i] + noise[i];
    }
    let mut info = StepInfo::new(S::one());
    info.accepted = true;
    info.n_grad = 1;
    if state.lambda.iter().chain(&state.nu).any(|x| !x.is_finite()) {
        return Err(SamplerError::Divergent { step: 1 });
    }
    Ok(info)
}
