use rand::Rng;

use crate::error::SamplerError;
use crate::mcmc::StepInfo;
use crate::models::LogDensity;
use crate::scalar::Scalar;

/// `min(1, ϱ(λ') s(λ|λ') / (ϱ(λ) s(λ'|λ)))` from log densities and the log
/// proposal ratio `log s(λ|λ') − log s(λ'|λ)`.
pub fn mh_accept_probability<S: Scalar>(log_new: S, log_old: S, log_proposal_ratio: S) -> Result<S, SamplerError> {
    if log_old == S::neg_infinity() {
        return Err(SamplerError::ZeroDensityStart);
    }
    if log_new == S::neg_infinity() {
        return Ok(S::zero());
    }
    let r = log_new - log_old + log_proposal_ratio;
    Ok(if r >= S::zero() { S::one() } else { r.exp() })
}

/// Gaussian random-walk Metropolis–Hastings step. Returns the next point and
/// its log density.
pub fn mh_step<S, T, R>(
    lambda: &[S],
    log_density: S,
    proposal_sd: &[S],
    target: &T,
    rng: &mut R,
) -> Result<(Vec<S>, S, StepInfo<S>), SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
    R: Rng + ?Sized,
{
    if log_density == S::neg_infinity() {
        return Err(SamplerError::ZeroDensityStart);
    }
    let proposal: Vec<S> = lambda
        .iter()
        .zip(proposal_sd)
        .map(|(&l, &s)| l + s * S::std_normal(rng))
        .collect();
    let lp_new = match target.log_density(&proposal) {
        Ok(v) if !v.is_nan() => v,
        Ok(_) | Err(crate::error::ModelError::Autodiff(_)) => S::neg_infinity(),
        Err(e) => return Err(e.into()),
    };
    let a = mh_accept_probability(lp_new, log_density, S::zero())?;
    let u = S::unit_uniform(rng);
    let mut info = StepInfo::new(a);
    info.n_grad = 0;
    if u < a {
        info.accepted = true;
        Ok((proposal, lp_new, info))
    } else {
        Ok((lambda.to_vec(), log_density, info))
    }
}
