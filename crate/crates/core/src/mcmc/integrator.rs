use crate::error::SamplerError;
use crate::linalg::Matrix;
use crate::mcmc::mass::MassMatrix;
use crate::models::LogDensity;
use crate::scalar::Scalar;

/// Phase-space point `z = (λ, ν)` with the target cached at `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState<S> {
    pub lambda: Vec<S>,
    pub nu: Vec<S>,
    pub log_density: S,
    /// `∇V(λ) = −∇ log ϱ(λ)`.
    pub grad_v: Vec<S>,
}

impl<S: Scalar> PhaseState<S> {
    /// State at `lambda` with zero momentum.
    pub fn new<T: LogDensity<S> + ?Sized>(target: &T, lambda: Vec<S>) -> Result<Self, SamplerError> {
        if lambda.len() != target.dim() {
            return Err(SamplerError::Config(format!(
                "initial point has length {}, target has dimension {}",
                lambda.len(),
                target.dim()
            )));
        }
        let (log_density, grad_v) = evaluate(target, &lambda)?;
        let nu = vec![S::zero(); lambda.len()];
        Ok(Self {
            lambda,
            nu,
            log_density,
            grad_v,
        })
    }

    pub fn potential(&self) -> S {
        -self.log_density
    }

    pub fn hamiltonian(&self, mass: &MassMatrix<S>) -> S {
        mass.kinetic(&self.nu) - self.log_density
    }
}

/// `(log ϱ, ∇V)` at `lambda`.
pub fn evaluate<S: Scalar, T: LogDensity<S> + ?Sized>(target: &T, lambda: &[S]) -> Result<(S, Vec<S>), SamplerError> {
    let (lp, g) = target.log_density_and_grad(lambda)?;
    Ok((lp, g.into_iter().map(|v| -v).collect()))
}

fn finite<S: Scalar>(lp: S, g: &[S]) -> bool {
    lp.is_finite() && g.iter().all(|v| v.is_finite())
}

fn premultiply<S: Scalar>(b: Option<&Matrix<S>>, v: Vec<S>) -> Vec<S> {
    match b {
        Some(b) => b.matvec(&v),
        None => v,
    }
}

/// Leapfrog integration of Hamilton's equations for `L` steps of size `ε`.
pub fn leapfrog<S: Scalar, T: LogDensity<S> + ?Sized>(
    z: &PhaseState<S>,
    n_steps: usize,
    eps: S,
    mass: &MassMatrix<S>,
    target: &T,
) -> Result<PhaseState<S>, SamplerError> {
    leapfrog_preconditioned(z, n_steps, eps, mass, None, target, |_, _| {})
}

/// Leapfrog with both updates premultiplied by a fixed symmetric `B`
/// (`λ̇ = B M⁻¹ ν`, `ν̇ = −B ∇V`). `visit` sees every position and its `∇V`,
/// starting with the initial one.
pub fn leapfrog_preconditioned<S, T, F>(
    z: &PhaseState<S>,
    n_steps: usize,
    eps: S,
    mass: &MassMatrix<S>,
    b: Option<&Matrix<S>>,
    target: &T,
    mut visit: F,
) -> Result<PhaseState<S>, SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
    F: FnMut(&[S], &[S]),
{
    let mut out = z.clone();
    visit(&out.lambda, &out.grad_v);
    if n_steps == 0 {
        return Ok(out);
    }
    let half = eps * S::lit(0.5);
    let kick = premultiply(b, out.grad_v.clone());
    out.nu.iter_mut().zip(&kick).for_each(|(n, &g)| *n = *n - half * g);
    for i in 1..=n_steps {
        let drift = premultiply(b, mass.inv_mul(&out.nu));
        out.lambda.iter_mut().zip(&drift).for_each(|(l, &v)| *l = *l + eps * v);
        let (lp, g) = match evaluate(target, &out.lambda) {
            Ok(r) if finite(r.0, &r.1) => r,
            Ok(_) | Err(SamplerError::Model(crate::error::ModelError::Autodiff(_))) => {
                return Err(SamplerError::Divergent { step: i })
            }
            Err(e) => return Err(e),
        };
        out.log_density = lp;
        out.grad_v = g;
        visit(&out.lambda, &out.grad_v);
        let step = if i == n_steps { half } else { eps };
        let kick = premultiply(b, out.grad_v.clone());
        out.nu.iter_mut().zip(&kick).for_each(|(n, &g)| *n = *n - step * g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AnalyticTarget, GaussianTarget};

    fn std_normal(d: usize) -> AnalyticTarget<f64> {
        AnalyticTarget::Gaussian(GaussianTarget::standard(d))
    }

    #[test]
    fn one_step_matches_hand_recurrence() {
        let t = std_normal(1);
        let mut z = PhaseState::new(&t, vec![1.0]).unwrap();
        z.nu = vec![0.0];
        let out = leapfrog(&z, 1, 0.1, &MassMatrix::identity(1), &t).unwrap();
        // ν½ = 0 − 0.05·1; λ₁ = 1 + 0.1·ν½; ν₁ = ν½ − 0.05·λ₁
        let nu_half = -0.05;
        let lam = 1.0 + 0.1 * nu_half;
        let nu = nu_half - 0.05 * lam;
        assert!((out.lambda[0] - lam).abs() < 1e-15);
        assert!((out.nu[0] - nu).abs() < 1e-15);
        assert!((out.lambda[0] - 0.995).abs() < 1e-15);
        assert!((out.nu[0] + 0.09975).abs() < 1e-15);
    }

    #[test]
    fn zero_step_size_is_identity() {
        let t = std_normal(2);
        let mut z = PhaseState::new(&t, vec![0.4, -0.2]).unwrap();
        z.nu = vec![1.0, 2.0];
        let out = leapfrog(&z, 5, 0.0, &MassMatrix::identity(2), &t).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn divergence_reports_step() {
        let t = AnalyticTarget::Funnel { dim: 2 };
        let mut z = PhaseState::new(&t, vec![-8.0, 1.0]).unwrap();
        z.nu = vec![0.0, 0.0];
        match leapfrog(&z, 50, 5.0, &MassMatrix::identity(2), &t) {
            Err(SamplerError::Divergent { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
