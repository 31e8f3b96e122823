//! Quasi-Newton HMC: the leapfrog updates are premultiplied by a symmetric
//! positive definite `B` built from BFGS secant pairs collected along past
//! trajectories. `B` is frozen within a trajectory.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::SamplerError;
use crate::linalg::{dot, Matrix};
use crate::mcmc::hmc::preconditioned_hmc_step;
use crate::mcmc::integrator::PhaseState;
use crate::mcmc::mass::MassMatrix;
use crate::mcmc::StepInfo;
use crate::models::LogDensity;
use crate::scalar::Scalar;

/// How `B` is derived from the inverse-Hessian estimate `H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    /// `B = H^{1/2}`, so `λ̈ = −H ∇²V λ`.
    SqrtInverseHessian,
    /// `B = H`.
    InverseHessian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QnhmcConfig {
    /// Number of secant pairs kept.
    pub memory: usize,
    /// A pair `(s, y)` is used only when `sᵀy ≥ η_B sᵀs`.
    pub eta_b: f64,
    pub preconditioner: Preconditioner,
    /// Keep learning `B` after burn-in. The chain is then only approximately
    /// stationary.
    pub update_after_burn_in: bool,
}

impl Default for QnhmcConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            eta_b: 1e-8,
            preconditioner: Preconditioner::SqrtInverseHessian,
            update_after_burn_in: false,
        }
    }
}

impl QnhmcConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.memory == 0 {
            return Err(SamplerError::Config("qnhmc memory must be at least 1".into()));
        }
        if !(self.eta_b > 0.0) {
            return Err(SamplerError::Config("qnhmc eta_b must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QnhmcState<S> {
    dim: usize,
    memory: usize,
    eta_b: S,
    kind: Preconditioner,
    pairs: VecDeque<(Vec<S>, Vec<S>)>,
    inverse_hessian: Option<Matrix<S>>,
    b: Option<Matrix<S>>,
    /// Pairs or rebuilds rejected to keep `B` positive definite.
    pub skipped: usize,
}

impl<S: Scalar> QnhmcState<S> {
    /// `B₀ = I`.
    pub fn new(dim: usize, cfg: &QnhmcConfig) -> Self {
        Self {
            dim,
            memory: cfg.memory,
            eta_b: S::lit(cfg.eta_b),
            kind: cfg.preconditioner,
            pairs: VecDeque::new(),
            inverse_hessian: None,
            b: None,
            skipped: 0,
        }
    }

    /// `None` means the identity.
    pub fn preconditioner(&self) -> Option<&Matrix<S>> {
        self.b.as_ref()
    }

    pub fn inverse_hessian(&self) -> Matrix<S> {
        self.inverse_hessian
            .clone()
            .unwrap_or_else(|| Matrix::identity(self.dim))
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Offers the pair `s = Δλ`, `y = Δ∇V`. Returns whether it was kept.
    pub fn push_pair(&mut self, s: Vec<S>, y: Vec<S>) -> bool {
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        if !(ss > S::zero()) || !(sy >= self.eta_b * ss) || !sy.is_finite() {
            self.skipped += 1;
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        true
    }

    /// Rebuilds `H` from the stored pairs with the BFGS recursion
    /// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`, starting from `γ I` with
    /// `γ = sᵀy / yᵀy` of the newest pair, then refreshes `B`.
    pub fn rebuild(&mut self) {
        let Some((s_last, y_last)) = self.pairs.back() else {
            return;
        };
        let d = self.dim;
        let gamma = dot(s_last, y_last) / dot(y_last, y_last);
        let mut h = Matrix::identity(d).scale(gamma);
        for (s, y) in &self.pairs {
            let rho = S::one() / dot(s, y);
            let hy = h.matvec(y);
            let yhy = dot(y, &hy);
            // expanded form of the rank-two update
            for i in 0..d {
                for j in 0..d {
                    let v = h[(i, j)] - rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                    h[(i, j)] = v;
                }
            }
        }
        // symmetrise against rounding
        let h = h.add(&h.transpose()).scale(S::lit(0.5));
        let b = match self.kind {
            Preconditioner::SqrtInverseHessian => h.spd_sqrt().ok(),
            Preconditioner::InverseHessian => h.cholesky().ok().map(|_| h.clone()),
        };
        match b {
            Some(b) if b.all_finite() => {
                self.inverse_hessian = Some(h);
                self.b = Some(b);
            }
            _ => self.skipped += 1,
        }
    }
}

/// One QNHMC transition. When `learn` is set, the secant pairs from the
/// trajectory are folded into `state` after the accept/reject decision.
#[allow(clippy::too_many_arguments)]
pub fn qnhmc_step<S, T, R>(
    z: &PhaseState<S>,
    eps: S,
    n_leapfrog: usize,
    mass: &MassMatrix<S>,
    state: &mut QnhmcState<S>,
    learn: bool,
    target: &T,
    rng: &mut R,
) -> Result<(PhaseState<S>, StepInfo<S>), SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
    R: Rng + ?Sized,
{
    let mut path: Vec<(Vec<S>, Vec<S>)> = Vec::new();
    let b = state.b.clone();
    let out = preconditioned_hmc_step(z, eps, n_leapfrog, mass, b.as_ref(), target, rng, |l, g| {
        if learn {
            path.push((l.to_vec(), g.to_vec()));
        }
    })?;
    if learn && path.len() >= 2 {
        let mut changed = false;
        for w in path.windows(2) {
            let s: Vec<S> = w[1].0.iter().zip(&w[0].0).map(|(&a, &b)| a - b).collect();
            let y: Vec<S> = w[1].1.iter().zip(&w[0].1).map(|(&a, &b)| a - b).collect();
            changed |= state.push_pair(s, y);
        }
        if changed {
            state.rebuild();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::hmc::hmc_step;
    use crate::models::{AnalyticTarget, GaussianTarget};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_preconditioner_reproduces_hmc() {
        let t = AnalyticTarget::Banana { a: 1.2, b: 0.4 };
        let mass = MassMatrix::identity(2);
        let mut state = QnhmcState::new(2, &QnhmcConfig::default());
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let mut a = PhaseState::new(&t, vec![0.3, 0.1]).unwrap();
        let mut b = a.clone();
        for _ in 0..50 {
            a = hmc_step(&a, 0.15, 12, &mass, &t, &mut r1).unwrap().0;
            b = qnhmc_step(&b, 0.15, 12, &mass, &mut state, false, &t, &mut r2)
                .unwrap()
                .0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn secant_condition_after_update() {
        let a = Matrix::from_rows(&[vec![3.0, 1.0, 0.0], vec![1.0, 2.0, 0.5], vec![0.0, 0.5, 1.0]]);
        let mut st = QnhmcState::<f64>::new(3, &QnhmcConfig::default());
        let steps = [vec![0.1, 0.0, 0.2], vec![-0.3, 0.4, 0.1], vec![0.2, 0.2, -0.5]];
        for s in steps {
            let y = a.matvec(&s);
            assert!(st.push_pair(s.clone(), y.clone()));
            st.rebuild();
            let hy = st.inverse_hessian().matvec(&y);
            for (u, v) in hy.iter().zip(&s) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        assert!(st.inverse_hessian().cholesky().is_ok());
    }

    #[test]
    fn negative_curvature_pair_skipped() {
        let mut st = QnhmcState::<f64>::new(2, &QnhmcConfig::default());
        assert!(!st.push_pair(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert_eq!(st.skipped, 1);
        assert!(st.preconditioner().is_none());
    }

    #[test]
    fn learned_preconditioner_stays_spd() {
        let t = AnalyticTarget::Gaussian(GaussianTarget::diagonal(vec![0.0, 0.0], &[1.0, 1e4]).unwrap());
        let mass = MassMatrix::identity(2);
        let mut st = QnhmcState::<f64>::new(2, &QnhmcConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut z = PhaseState::new(&t, vec![1.0, 50.0]).unwrap();
        for _ in 0..40 {
            z = qnhmc_step(&z, 0.1, 10, &mass, &mut st, true, &t, &mut rng).unwrap().0;
        }
        let b = st.preconditioner().expect("B learned");
        assert!(b.cholesky().is_ok());
        // preconditioned Hessian B A B is close to the identity
        let a = Matrix::from_diag(&[1.0, 1e-4]);
        let (vals, _) = b.matmul(&a).matmul(b).symmetric_eigen().unwrap();
        let (lo, hi) = (vals[0].min(vals[1]), vals[0].max(vals[1]));
        assert!(hi / lo < 10.0, "eigenvalues {vals:?}");
    }
}
