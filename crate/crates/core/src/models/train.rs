//! MLE and MAP point estimates by fixed-step gradient ascent.

use crate::error::ModelError;
use crate::models::target::BayesianModel;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointEstimate {
    /// Likelihood only.
    Mle,
    /// Likelihood plus prior.
    Map,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimiserConfig {
    pub step_size: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult<S> {
    pub params: Vec<S>,
    /// Objective at `params`.
    pub objective: S,
    pub trace: Vec<S>,
}

fn objective<S: Scalar, M: BayesianModel<S> + ?Sized>(
    model: &M,
    mode: PointEstimate,
    w: &[S],
) -> Result<(S, Vec<S>), ModelError> {
    let (mut v, mut g) = model.log_likelihood_and_grad(w, None)?;
    if mode == PointEstimate::Map {
        let (lp, gp) = model.log_prior_and_grad(w);
        v = v + lp;
        g.iter_mut().zip(gp).for_each(|(a, b)| *a = *a + b);
    }
    Ok((v, g))
}

pub fn train_point_estimate<S: Scalar, M: BayesianModel<S> + ?Sized>(
    model: &M,
    mode: PointEstimate,
    init: &[S],
    cfg: OptimiserConfig,
) -> Result<TrainResult<S>, ModelError> {
    if !(cfg.step_size > 0.0) {
        return Err(ModelError::Config(format!(
            "step size must be positive, got {}",
            cfg.step_size
        )));
    }
    if init.len() != model.dim() {
        return Err(ModelError::Config(format!(
            "initial parameters have length {}, model has {}",
            init.len(),
            model.dim()
        )));
    }
    let eta = S::lit(cfg.step_size);
    let mut w = init.to_vec();
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let diverged = |iteration: usize, w: &[S]| ModelError::Diverged {
        iteration,
        last_finite: w.iter().map(|v| v.to_f64_lossy()).collect(),
    };
    let (mut value, mut grad) = objective(model, mode, &w).map_err(|_| diverged(0, &w))?;
    trace.push(value);
    for it in 1..=cfg.iterations {
        let next: Vec<S> = w.iter().zip(&grad).map(|(&a, &g)| a + eta * g).collect();
        let (v, g) = match objective(model, mode, &next) {
            Ok(r) if !r.0.is_nan() && r.1.iter().all(|x| x.is_finite()) => r,
            _ => return Err(diverged(it, &w)),
        };
        if next.iter().any(|x| !x.is_finite()) {
            return Err(diverged(it, &w));
        }
        w = next;
        value = v;
        grad = g;
        trace.push(value);
    }
    Ok(TrainResult {
        params: w,
        objective: value,
        trace,
    })
}
