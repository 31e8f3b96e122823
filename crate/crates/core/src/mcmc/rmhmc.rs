//! Riemannian-manifold HMC with
//! `H = V(λ) + ½ log((2π)^d |G(λ)|) + ½ νᵀ G(λ)⁻¹ ν`, integrated by the
//! generalized leapfrog with fixed-point iterations for the implicit steps.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::SamplerError;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::mcmc::integrator::{evaluate, PhaseState};
use crate::mcmc::{StepInfo, DIVERGENCE_THRESHOLD};
use crate::models::LogDensity;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum MetricSource<S> {
    /// A fixed metric.
    Constant(Matrix<S>),
    /// The target's closed-form Fisher information, position dependent.
    TargetFisher,
    /// Mean of `g gᵀ` over the last `window` log-density gradients seen at
    /// trajectory starts. Held fixed within a trajectory.
    GradientOuterProduct { window: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmhmcConfig<S> {
    pub metric: MetricSource<S>,
    pub fixed_point_iters: usize,
    /// `η_F`, added to the diagonal of every metric.
    pub jitter: f64,
    /// Central-difference step for `∂G/∂λ`.
    pub fd_step: f64,
    pub tolerance: f64,
    /// Keep updating the gradient window after burn-in.
    pub update_after_burn_in: bool,
}

impl<S> RmhmcConfig<S> {
    pub fn new(metric: MetricSource<S>) -> Self {
        Self {
            metric,
            fixed_point_iters: 10,
            jitter: 1e-6,
            fd_step: 1e-4,
            tolerance: 1e-9,
            update_after_burn_in: false,
        }
    }
}

impl<S: Scalar> RmhmcConfig<S> {
    pub fn validate(&self, dim: usize) -> Result<(), SamplerError> {
        if self.fixed_point_iters == 0 {
            return Err(SamplerError::Config(
                "rmhmc needs at least one fixed-point iteration".into(),
            ));
        }
        if !(self.jitter > 0.0) {
            return Err(SamplerError::Config("rmhmc jitter must be positive".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(SamplerError::Config(
                "rmhmc finite-difference step must be positive".into(),
            ));
        }
        match &self.metric {
            MetricSource::Constant(m) if m.rows() != dim || !m.is_square() => {
                Err(SamplerError::Config("constant metric has the wrong shape".into()))
            }
            MetricSource::GradientOuterProduct { window: 0 } => {
                Err(SamplerError::Config("gradient window must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Adaptive part of the metric: the gradient window.
#[derive(Clone, Debug)]
pub struct RmhmcState<S> {
    grads: VecDeque<Vec<S>>,
    window_metric: Option<Matrix<S>>,
}

impl<S: Scalar> Default for RmhmcState<S> {
    fn default() -> Self {
        Self {
            grads: VecDeque::new(),
            window_metric: None,
        }
    }
}

impl<S: Scalar> RmhmcState<S> {
    /// Adds `∇ log ϱ` at the current point to the window.
    pub fn observe(&mut self, cfg: &RmhmcConfig<S>, grad_log_density: &[S]) {
        let MetricSource::GradientOuterProduct { window } = cfg.metric else {
            return;
        };
        if self.grads.len() == window {
            self.grads.pop_front();
        }
        self.grads.push_back(grad_log_density.to_vec());
        let d = grad_log_density.len();
        let mut m = Matrix::zeros(d, d);
        let w = S::one() / S::from_usize(self.grads.len()).unwrap();
        for g in &self.grads {
            m.axpy(w, &Matrix::outer(g, g));
        }
        self.window_metric = Some(m);
    }
}

struct Metric<S> {
    chol: Cholesky<S>,
    inv: Matrix<S>,
    /// `∂G/∂λ_i`, empty when `G` is constant in `λ`.
    deriv: Vec<Matrix<S>>,
}

struct Geometry<'a, S, T: ?Sized> {
    cfg: &'a RmhmcConfig<S>,
    state: &'a RmhmcState<S>,
    target: &'a T,
    dim: usize,
}

impl<S: Scalar, T: LogDensity<S> + ?Sized> Geometry<'_, S, T> {
    fn raw(&self, lambda: &[S]) -> Result<Matrix<S>, SamplerError> {
        let mut g = match &self.cfg.metric {
            MetricSource::Constant(m) => m.clone(),
            MetricSource::TargetFisher => self
                .target
                .expected_fisher(lambda)
                .ok_or_else(|| SamplerError::Config("target has no closed-form Fisher information".into()))?,
            MetricSource::GradientOuterProduct { .. } => self
                .state
                .window_metric
                .clone()
                .unwrap_or_else(|| Matrix::zeros(self.dim, self.dim)),
        };
        let j = S::lit(self.cfg.jitter);
        for i in 0..self.dim {
            g[(i, i)] = g[(i, i)] + j;
        }
        Ok(g)
    }

    fn position_dependent(&self) -> bool {
        matches!(self.cfg.metric, MetricSource::TargetFisher)
    }

    fn at(&self, lambda: &[S]) -> Result<Metric<S>, SamplerError> {
        let g = self.raw(lambda)?;
        let chol = g.cholesky()?;
        let inv = chol.inverse();
        let mut deriv = Vec::new();
        if self.position_dependent() {
            let h = S::lit(self.cfg.fd_step);
            let mut p = lambda.to_vec();
            for i in 0..self.dim {
                p[i] = lambda[i] + h;
                let up = self.raw(&p)?;
                p[i] = lambda[i] - h;
                let down = self.raw(&p)?;
                p[i] = lambda[i];
                deriv.push(up.sub(&down).scale(S::one() / (h + h)));
            }
        }
        Ok(Metric { chol, inv, deriv })
    }
}

/// `∂H/∂λ_i = ∂V/∂λ_i + ½ tr(G⁻¹ ∂_i G) − ½ νᵀ G⁻¹ ∂_i G G⁻¹ ν`.
fn dh_dlambda<S: Scalar>(grad_v: &[S], m: &Metric<S>, nu: &[S]) -> Vec<S> {
    if m.deriv.is_empty() {
        return grad_v.to_vec();
    }
    let ginv_nu = m.chol.solve(nu);
    grad_v
        .iter()
        .zip(&m.deriv)
        .map(|(&gv, dg)| {
            let tr = m.inv.matmul(dg).trace();
            let quad = dot(&ginv_nu, &dg.matvec(&ginv_nu));
            gv + S::lit(0.5) * (tr - quad)
        })
        .collect()
}

fn hamiltonian<S: Scalar>(log_density: S, m: &Metric<S>, nu: &[S]) -> S {
    let d = S::from_usize(nu.len()).unwrap();
    let half = S::lit(0.5);
    -log_density + half * (d * S::TAU().ln() + m.chol.log_det()) + half * dot(nu, &m.chol.solve(nu))
}

fn max_change<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / (S::one() + y.abs()))
        .fold(S::zero(), S::max)
}

enum Outcome<S> {
    Done(PhaseState<S>, Metric<S>),
    Diverged,
    NotConverged,
}

fn generalized_leapfrog<S: Scalar, T: LogDensity<S> + ?Sized>(
    start: &PhaseState<S>,
    metric0: Metric<S>,
    n_steps: usize,
    eps: S,
    geo: &Geometry<'_, S, T>,
) -> Result<Outcome<S>, SamplerError> {
    let half = eps * S::lit(0.5);
    let tol = S::lit(geo.cfg.tolerance);
    let iters = geo.cfg.fixed_point_iters;
    let check = iters >= 2;
    let mut z = start.clone();
    let mut m = metric0;
    for _ in 0..n_steps {
        // implicit half step in ν
        let mut p = z.nu.clone();
        let mut converged = !check;
        for _ in 0..iters {
            let d = dh_dlambda(&z.grad_v, &m, &p);
            let next: Vec<S> = z.nu.iter().zip(&d).map(|(&n, &g)| n - half * g).collect();
            let change = max_change(&next, &p);
            p = next;
            if change <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Ok(Outcome::NotConverged);
        }
        // implicit full step in λ
        let v0 = m.chol.solve(&p);
        let mut lam: Vec<S> = z.lambda.iter().zip(&v0).map(|(&l, &v)| l + eps * v).collect();
        if geo.position_dependent() {
            let mut converged = !check;
            for _ in 0..iters {
                let g = match geo.raw(&lam).and_then(|g| Ok(g.cholesky()?)) {
                    Ok(c) => c,
                    Err(SamplerError::Linalg(_)) => return Ok(Outcome::Diverged),
                    Err(e) => return Err(e),
                };
                let v1 = g.solve(&p);
                let next: Vec<S> = z
                    .lambda
                    .iter()
                    .zip(v0.iter().zip(&v1))
                    .map(|(&l, (&a, &b))| l + half * (a + b))
                    .collect();
                let change = max_change(&next, &lam);
                lam = next;
                if change <= tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Ok(Outcome::NotConverged);
            }
        }
        if lam.iter().any(|v| !v.is_finite()) {
            return Ok(Outcome::Diverged);
        }
        let (lp, gv) = match evaluate(geo.target, &lam) {
            Ok(r) if r.0.is_finite() && r.1.iter().all(|v| v.is_finite()) => r,
            Ok(_) | Err(SamplerError::Model(crate::error::ModelError::Autodiff(_))) => return Ok(Outcome::Diverged),
            Err(e) => return Err(e),
        };
        m = match geo.at(&lam) {
            Ok(m) => m,
            Err(SamplerError::Linalg(_)) => return Ok(Outcome::Diverged),
            Err(e) => return Err(e),
        };
        // explicit half step in ν
        let d = dh_dlambda(&gv, &m, &p);
        z.nu = p.iter().zip(&d).map(|(&n, &g)| n - half * g).collect();
        z.lambda = lam;
        z.log_density = lp;
        z.grad_v = gv;
    }
    Ok(Outcome::Done(z, m))
}

/// One RMHMC transition with `ν ~ N(0, G(λ))`.
#[allow(clippy::too_many_arguments)]
pub fn rmhmc_step<S, T, R>(
    z: &PhaseState<S>,
    eps: S,
    n_leapfrog: usize,
    cfg: &RmhmcConfig<S>,
    state: &mut RmhmcState<S>,
    learn: bool,
    target: &T,
    rng: &mut R,
) -> Result<(PhaseState<S>, StepInfo<S>), SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
    R: Rng + ?Sized,
{
    let dim = z.lambda.len();
    if learn {
        let g: Vec<S> = z.grad_v.iter().map(|&v| -v).collect();
        state.observe(cfg, &g);
    }
    let geo = Geometry {
        cfg,
        state,
        target,
        dim,
    };
    let m0 = geo.at(&z.lambda)?;
    let zeta: Vec<S> = (0..dim).map(|_| S::std_normal(rng)).collect();
    let mut start = z.clone();
    start.nu = m0.chol.mul_l(&zeta);
    let h0 = hamiltonian(start.log_density, &m0, &start.nu);
    let outcome = generalized_leapfrog(&start, m0, n_leapfrog, eps, &geo)?;
    let u = S::unit_uniform(rng);
    let mut info = StepInfo::new(S::zero());
    info.n_grad = n_leapfrog;
    let (end, m1) = match outcome {
        Outcome::Done(end, m1) => (end, m1),
        Outcome::Diverged => {
            info.divergent = true;
            info.delta_h = S::infinity();
            return Ok((z.clone(), info));
        }
        Outcome::NotConverged => {
            info.non_converged = true;
            return Ok((z.clone(), info));
        }
    };
    let dh = hamiltonian(end.log_density, &m1, &end.nu) - h0;
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
