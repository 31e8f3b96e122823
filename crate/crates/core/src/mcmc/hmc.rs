use rand::Rng;

use crate::error::SamplerError;
use crate::linalg::Matrix;
use crate::mcmc::integrator::{leapfrog_preconditioned, PhaseState};
use crate::mcmc::mass::MassMatrix;
use crate::mcmc::{StepInfo, DIVERGENCE_THRESHOLD};
use crate::models::LogDensity;
use crate::scalar::Scalar;

/// Draws `ν ~ N(0, M)`, integrates, and applies the Metropolis correction
/// `min(1, exp(−(H' − H)))`.
pub fn hmc_step<S, T, R>(
    z: &PhaseState<S>,
    eps: S,
    n_leapfrog: usize,
    mass: &MassMatrix<S>,
    target: &T,
    rng: &mut R,
) -> Result<(PhaseState<S>, StepInfo<S>), SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
    R: Rng + ?Sized,
{
    preconditioned_hmc_step(z, eps, n_leapfrog, mass, None, target, rng, |_, _| {})
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn preconditioned_hmc_step<S, T, R, F>(
    z: &PhaseState<S>,
    eps: S,
    n_leapfrog: usize,
    mass: &MassMatrix<S>,
    b: Option<&Matrix<S>>,
    target: &T,
    rng: &mut R,
    visit: F,
) -> Result<(PhaseState<S>, StepInfo<S>), SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&[S], &[S]),
{
    let mut start = z.clone();
    start.nu = mass.sample_momentum(rng);
    let h0 = start.hamiltonian(mass);
    let proposal = leapfrog_preconditioned(&start, n_leapfrog, eps, mass, b, target, visit);
    let u = S::unit_uniform(rng);
    let mut info = StepInfo::new(S::zero());
    info.n_grad = n_leapfrog;
    let end = match proposal {
        Ok(end) => end,
        Err(SamplerError::Divergent { .. }) => {
            info.divergent = true;
            info.delta_h = S::infinity();
            return Ok((z.clone(), info));
        }
        Err(e) => return Err(e),
    };
    let dh = end.hamiltonian(mass) - h0;
    info.delta_h = dh;
    if !dh.is_finite() || dh > S::lit(DIVERGENCE_THRESHOLD) {
        info.divergent = true;
        return Ok((z.clone(), info));
    }
    info.accept_prob = if dh <= S::zero() { S::one() } else { (-dh).exp() };
    if u < info.accept_prob {
        info.accepted = true;
        Ok((end, info))
    } else {
        Ok((z.clone(), info))
    }
}

/// One Robbins–Monro step `log ε' = log ε + t^{−0.6} (ā − δ)` with `ā` the
/// mean of `history`.
pub fn adapt_step_size<S: Scalar>(history: &[S], delta: S, eps: S, t: usize) -> S {
    assert!(!history.is_empty(), "acceptance history is empty");
    let n = S::from_usize(history.len()).unwrap();
    let mean = history.iter().copied().sum::<S>() / n;
    let kappa = S::from_usize(t.max(1)).unwrap().powf(S::lit(-0.6));
    (eps.ln() + kappa * (mean - delta)).exp()
}

/// Running Robbins–Monro controller. [`finish`](Self::finish) returns the
/// geometric mean of the iterates from the second half of the window.
#[derive(Clone, Debug)]
pub struct StepSizeAdapter {
    log_eps: f64,
    delta: f64,
    t: usize,
    history: Vec<f64>,
}

impl StepSizeAdapter {
    pub fn new(eps: f64, delta: f64) -> Self {
        Self {
            log_eps: eps.ln(),
            delta,
            t: 0,
            history: Vec::new(),
        }
    }

    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1;
        let eps = adapt_step_size(&[accept_prob], self.delta, self.current(), self.t);
        self.log_eps = eps.ln().clamp(-30.0, 10.0);
        self.history.push(self.log_eps);
        self.current()
    }

    pub fn finish(&self) -> f64 {
        let tail = &self.history[self.history.len() / 2..];
        if tail.is_empty() {
            return self.current();
        }
        (tail.iter().sum::<f64>() / tail.len() as f64).exp()
    }

    /// Restart the schedule from the current step size.
    pub fn restart(&mut self) {
        self.t = 0;
        self.history.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AnalyticTarget, GaussianTarget};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adaptation_signs() {
        assert_eq!(adapt_step_size(&[0.65], 0.65, 0.3, 5), 0.3);
        assert!(adapt_step_size(&[1.0], 0.65, 0.3, 5) > 0.3);
        assert!(adapt_step_size(&[0.1], 0.65, 0.3, 5) < 0.3);
    }

    #[test]
    fn small_steps_accept_nearly_always() {
        let t = AnalyticTarget::Gaussian(GaussianTarget::<f64>::standard(3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = PhaseState::new(&t, vec![0.5, -0.5, 1.0]).unwrap();
        let (_, info) = hmc_step(&z, 1e-4, 10, &MassMatrix::identity(3), &t, &mut rng).unwrap();
        assert!(info.accept_prob > 0.999_999);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let t = AnalyticTarget::Banana { a: 1.0, b: 0.5 };
        let z = PhaseState::new(&t, vec![0.1, 0.2]).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            hmc_step(&z, 0.2, 7, &MassMatrix::identity(2), &t, &mut rng).unwrap().0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ill_conditioned_with_matching_mass() {
        let t = AnalyticTarget::Gaussian(GaussianTarget::diagonal(vec![0.0, 0.0], &[1.0, 100.0]).unwrap());
        let mass = MassMatrix::diagonal(vec![1.0, 0.01]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut z = PhaseState::new(&t, vec![0.0, 0.0]).unwrap();
        let n = 10_000;
        let mut s2 = [0.0; 2];
        for _ in 0..n {
            z = hmc_step(&z, 0.2, 20, &mass, &t, &mut rng).unwrap().0;
            s2[0] += z.lambda[0] * z.lambda[0];
            s2[1] += z.lambda[1] * z.lambda[1];
        }
        assert!((s2[0] / n as f64 - 1.0).abs() < 0.1);
        assert!((s2[1] / n as f64 / 100.0 - 1.0).abs() < 0.1);
    }
}
