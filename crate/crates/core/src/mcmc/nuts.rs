//! Dynamic-trajectory HMC: trajectories double until they turn back on
//! themselves, and the next state is drawn from all visited points with
//! weights `exp(−H)`.

use rand::Rng;

use crate::error::SamplerError;
use crate::linalg::dot;
use crate::mcmc::integrator::{leapfrog, PhaseState};
use crate::mcmc::mass::MassMatrix;
use crate::mcmc::{StepInfo, DIVERGENCE_THRESHOLD};
use crate::models::LogDensity;
use crate::scalar::{log_sum_exp, Scalar};

/// `s = (λ⁺ − λ⁻)·v`; the trajectory keeps growing while `s > 0` at both ends.
pub fn u_turn<S: Scalar>(lambda_plus: &[S], lambda_minus: &[S], velocity: &[S]) -> S {
    let diff: Vec<S> = lambda_plus.iter().zip(lambda_minus).map(|(&a, &b)| a - b).collect();
    dot(&diff, velocity)
}

fn turned<S: Scalar>(minus: &PhaseState<S>, plus: &PhaseState<S>, mass: &MassMatrix<S>) -> bool {
    u_turn(&plus.lambda, &minus.lambda, &mass.inv_mul(&minus.nu)) <= S::zero()
        || u_turn(&plus.lambda, &minus.lambda, &mass.inv_mul(&plus.nu)) <= S::zero()
}

struct Tree<S> {
    minus: PhaseState<S>,
    plus: PhaseState<S>,
    proposal: PhaseState<S>,
    log_weight: S,
    turning: bool,
    diverged: bool,
    n_steps: usize,
    sum_accept: S,
}

struct Ctx<'a, S, T: ?Sized> {
    eps: S,
    mass: &'a MassMatrix<S>,
    target: &'a T,
    h0: S,
}

fn build_tree<S, T, R>(
    edge: &PhaseState<S>,
    forward: bool,
    depth: usize,
    ctx: &Ctx<'_, S, T>,
    rng: &mut R,
) -> Result<Tree<S>, SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
    R: Rng + ?Sized,
{
    if depth == 0 {
        let eps = if forward { ctx.eps } else { -ctx.eps };
        let leaf = match leapfrog(edge, 1, eps, ctx.mass, ctx.target) {
            Ok(z) => z,
            Err(SamplerError::Divergent { .. }) => {
                return Ok(Tree {
                    minus: edge.clone(),
                    plus: edge.clone(),
                    proposal: edge.clone(),
                    log_weight: S::neg_infinity(),
                    turning: false,
                    diverged: true,
                    n_steps: 1,
                    sum_accept: S::zero(),
                })
            }
            Err(e) => return Err(e),
        };
        let dh = leaf.hamiltonian(ctx.mass) - ctx.h0;
        let diverged = !dh.is_finite() || dh > S::lit(DIVERGENCE_THRESHOLD);
        let accept = if diverged { S::zero() } else { (-dh).exp().min(S::one()) };
        return Ok(Tree {
            minus: leaf.clone(),
            plus: leaf.clone(),
            proposal: leaf,
            log_weight: if diverged { S::neg_infinity() } else { -dh },
            turning: false,
            diverged,
            n_steps: 1,
            sum_accept: accept,
        });
    }
    let first = build_tree(edge, forward, depth - 1, ctx, rng)?;
    if first.diverged || first.turning {
        return Ok(first);
    }
    let next_edge = if forward { &first.plus } else { &first.minus };
    let second = build_tree(next_edge, forward, depth - 1, ctx, rng)?;
    let n_steps = first.n_steps + second.n_steps;
    let sum_accept = first.sum_accept + second.sum_accept;
    if second.diverged || second.turning {
        return Ok(Tree {
            n_steps,
            sum_accept,
            ..second
        });
    }
    let log_weight = log_sum_exp(&[first.log_weight, second.log_weight]);
    let take_second = S::unit_uniform(rng) < (second.log_weight - log_weight).exp();
    let (minus, plus) = if forward {
        (first.minus, second.plus)
    } else {
        (second.minus, first.plus)
    };
    let turning = turned(&minus, &plus, ctx.mass);
    Ok(Tree {
        minus,
        plus,
        proposal: if take_second { second.proposal } else { first.proposal },
        log_weight,
        turning,
        diverged: false,
        n_steps,
        sum_accept,
    })
}

/// One NUTS transition. `accept_prob` in the returned info is the mean
/// Metropolis acceptance over all visited leaves.
pub fn nuts_step<S, T, R>(
    z: &PhaseState<S>,
    eps: S,
    max_depth: usize,
    mass: &MassMatrix<S>,
    target: &T,
    rng: &mut R,
) -> Result<(PhaseState<S>, StepInfo<S>), SamplerError>
where
    S: Scalar,
    T: LogDensity<S> + ?Sized,
    R: Rng + ?Sized,
{
    let mut start = z.clone();
    start.nu = mass.sample_momentum(rng);
    let h0 = start.hamiltonian(mass);
    let ctx = Ctx { eps, mass, target, h0 };
    let mut minus = start.clone();
    let mut plus = start.clone();
    let mut proposal = start;
    let mut log_weight = S::zero();
    let mut info = StepInfo::new(S::zero());
    let mut sum_accept = S::zero();
    for depth in 0..max_depth {
        let forward = rng.random::<bool>();
        let edge = if forward { &plus } else { &minus };
        let tree = build_tree(edge, forward, depth, &ctx, rng)?;
        info.n_grad += tree.n_steps;
        sum_accept = sum_accept + tree.sum_accept;
        if tree.diverged {
            info.divergent = true;
            break;
        }
        if tree.turning {
            break;
        }
        if S::unit_uniform(rng) < (tree.log_weight - log_weight).exp() {
            proposal = tree.proposal;
        }
        log_weight = log_sum_exp(&[log_weight, tree.log_weight]);
        if forward {
            plus = tree.plus;
        } else {
            minus = tree.minus;
        }
        if turned(&minus, &plus, mass) {
            break;
        }
    }
    if info.n_grad > 0 {
        info.accept_prob = sum_accept / S::from_usize(info.n_grad).unwrap();
    }
    info.delta_h = proposal.hamiltonian(mass) - h0;
    info.accepted = proposal.lambda != z.lambda;
    proposal.nu = vec![S::zero(); proposal.nu.len()];
    Ok((proposal, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AnalyticTarget, GaussianTarget};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn u_turn_sign() {
        assert_eq!(u_turn(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(u_turn(&[1.0, 0.0], &[0.0, 0.0], &[-1.0, 0.0]), -1.0);
    }

    #[test]
    fn ten_dim_standard_normal_moments() {
        let d = 10;
        let t = AnalyticTarget::Gaussian(GaussianTarget::<f64>::standard(d));
        let mass = MassMatrix::identity(d);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut z = PhaseState::new(&t, vec![0.0; d]).unwrap();
        let n = 5000;
        let mut s = vec![0.0; d];
        let mut s2 = vec![0.0; d];
        for _ in 0..n {
            z = nuts_step(&z, 0.5, 10, &mass, &t, &mut rng).unwrap().0;
            for i in 0..d {
                s[i] += z.lambda[i];
                s2[i] += z.lambda[i] * z.lambda[i];
            }
        }
        for i in 0..d {
            let m = s[i] / n as f64;
            let v = s2[i] / n as f64 - m * m;
            assert!(m.abs() < 0.05, "mean {m}");
            assert!((v - 1.0).abs() < 0.1, "var {v}");
        }
    }

    #[test]
    fn huge_step_diverges_in_place() {
        let t = AnalyticTarget::Funnel { dim: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = PhaseState::new(&t, vec![-6.0, 0.5, -0.5]).unwrap();
        let (next, info) = nuts_step(&z, 50.0, 8, &MassMatrix::identity(3), &t, &mut rng).unwrap();
        assert!(info.divergent);
        assert_eq!(next.lambda, z.lambda);
    }
}
