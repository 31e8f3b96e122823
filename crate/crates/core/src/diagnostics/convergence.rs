use crate::error::DiagnosticsError;
use crate::mcmc::Chain;
use crate::scalar::Scalar;

const MIN_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EssEstimate {
    pub ess: f64,
    /// The chain is constant; `ess` is then 0.
    pub degenerate: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Sums `ρ_t` pairs until the first non-positive pair, returning `τ = 1 + 2Σρ_t`.
fn geyer_tau(n: usize, rho: impl Fn(usize) -> f64) -> f64 {
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if !(pair > 0.0) {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    tau
}

/// Effective sample size of one chain, `n / (1 + 2Σρ_t)` with Geyer's
/// initial positive sequence truncation. Capped at `n`.
pub fn effective_sample_size(x: &[f64]) -> Result<EssEstimate, DiagnosticsError> {
    ess_multi(&[x])
}

/// Multi-chain effective sample size using the combined autocorrelation
/// `ρ_t = 1 − (W − mean_c acov_c(t)) / var⁺`. Capped at the total draw count.
pub fn ess_multi(chains: &[&[f64]]) -> Result<EssEstimate, DiagnosticsError> {
    check_chains(chains)?;
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, 0)).collect();
    if acov0.iter().all(|&v| v == 0.0) {
        return Ok(EssEstimate {
            ess: 0.0,
            degenerate: true,
        });
    }
    let total = (m * n) as f64;
    let tau = if m == 1 {
        geyer_tau(n, |t| autocov(chains[0], means[0], t) / acov0[0])
    } else {
        let nf = n as f64;
        let w = acov0.iter().map(|v| v * nf / (nf - 1.0)).sum::<f64>() / m as f64;
        let grand = mean(&means);
        let b = nf * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        let var_plus = (nf - 1.0) / nf * w + b / nf;
        geyer_tau(n, |t| {
            let ac = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, t)).sum::<f64>() / m as f64;
            let ac = if t == 0 { ac * nf / (nf - 1.0) } else { ac };
            1.0 - (w - ac) / var_plus
        })
    };
    let ess = if tau > 0.0 { (total / tau).min(total) } else { total };
    Ok(EssEstimate { ess, degenerate: false })
}

fn check_chains(chains: &[&[f64]]) -> Result<(), DiagnosticsError> {
    let Some(first) = chains.first() else {
        return Err(DiagnosticsError::Precondition("no chains given".into()));
    };
    if chains.iter().any(|c| c.len() != first.len()) {
        return Err(DiagnosticsError::Precondition("chains have different lengths".into()));
    }
    if first.len() < MIN_SAMPLES {
        return Err(DiagnosticsError::Precondition(format!(
            "need at least {MIN_SAMPLES} draws per chain, got {}",
            first.len()
        )));
    }
    Ok(())
}

/// Split-chain potential scale reduction `√(var⁺ / W)`.
pub fn r_hat(chains: &[&[f64]]) -> Result<f64, DiagnosticsError> {
    check_chains(chains)?;
    let n = chains[0].len();
    let half = n / 2;
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[n - half..]);
    }
    if parts.len() < 2 {
        return Err(DiagnosticsError::Precondition("fewer than two split halves".into()));
    }
    let m = parts.len() as f64;
    let nf = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let vars: Vec<f64> = parts
        .iter()
        .zip(&means)
        .map(|(p, &mu)| p.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b = nf * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

/// Per-dimension diagnostics across chains of the same run.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainStats {
    pub ess: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub r_hat: Vec<f64>,
    pub acceptance_rate: f64,
    pub divergences: usize,
}

pub fn chain_stats<S: Scalar>(chains: &[Chain<S>]) -> Result<ChainStats, DiagnosticsError> {
    let Some(first) = chains.first() else {
        return Err(DiagnosticsError::Precondition("no chains given".into()));
    };
    let d = first.dim();
    if chains.iter().any(|c| c.dim() != d) {
        return Err(DiagnosticsError::Precondition(
            "chains have different dimensions".into(),
        ));
    }
    let mut stats = ChainStats {
        ess: Vec::with_capacity(d),
        degenerate: Vec::with_capacity(d),
        r_hat: Vec::with_capacity(d),
        acceptance_rate: chains.iter().map(|c| c.acceptance_rate()).sum::<f64>() / chains.len() as f64,
        divergences: chains.iter().map(|c| c.divergences).sum(),
    };
    for j in 0..d {
        let cols: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.samples.column(j).into_iter().map(|v| v.to_f64_lossy()).collect())
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let e = ess_multi(&refs)?;
        stats.ess.push(e.ess);
        stats.degenerate.push(e.degenerate);
        stats.r_hat.push(r_hat(&refs)?);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                x = phi * x + e;
                x
            })
            .collect()
    }

    #[test]
    fn iid_ess_near_n() {
        let x = iid(1, 10_000);
        let e = effective_sample_size(&x).unwrap();
        assert!((0.8..=1.2).contains(&(e.ess / 10_000.0)), "{}", e.ess);
    }

    #[test]
    fn ar1_ess_matches_theory() {
        let x = ar1(2, 100_000, 0.9);
        let e = effective_sample_size(&x).unwrap().ess / 100_000.0;
        let expect = 0.1 / 1.9;
        assert!((e / expect - 1.0).abs() < 0.3, "{e}");
    }

    #[test]
    fn constant_chain_is_degenerate() {
        let e = effective_sample_size(&[2.5; 100]).unwrap();
        assert_eq!(
            e,
            EssEstimate {
                ess: 0.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn short_chain_rejected() {
        assert!(effective_sample_size(&[1.0; 50]).is_err());
    }

    #[test]
    fn rhat_same_distribution() {
        let (a, b) = (iid(3, 5000), iid(4, 5000));
        assert!(r_hat(&[&a, &b]).unwrap() < 1.01);
    }

    #[test]
    fn rhat_separated_means() {
        let a = iid(5, 1000);
        let b: Vec<f64> = iid(6, 1000).iter().map(|v| v + 10.0).collect();
        assert!(r_hat(&[&a, &b]).unwrap() > 1.5);
    }

    #[test]
    fn rhat_duplicated_chain() {
        let a = iid(7, 1000);
        let r = r_hat(&[&a, &a]).unwrap();
        assert!((r - 1.0).abs() < 0.01);
    }

    #[test]
    fn multi_chain_ess_bounded() {
        let (a, b) = (iid(8, 2000), iid(9, 2000));
        let e = ess_multi(&[&a, &b]).unwrap().ess;
        assert!(e > 0.0 && e <= 4000.0);
        assert!(e > 3000.0);
    }
}
