//! Coordinate-ascent mean-field inference on gridded targets.

use crate::error::ViError;
use crate::scalar::log_sum_exp;

pub const MAX_GRID_DIMS: usize = 3;
pub const MAX_AXIS_POINTS: usize = 256;

fn check_axes(axes: &[Vec<f64>]) -> Result<usize, ViError> {
    if axes.is_empty() || axes.len() > MAX_GRID_DIMS {
        return Err(ViError::Config(format!(
            "grid needs 1..={MAX_GRID_DIMS} axes, got {}",
            axes.len()
        )));
    }
    for (j, a) in axes.iter().enumerate() {
        if a.is_empty() || a.len() > MAX_AXIS_POINTS {
            return Err(ViError::Config(format!(
                "axis {j} has {} points, allowed 1..={MAX_AXIS_POINTS}",
                a.len()
            )));
        }
        if a.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ViError::Config(format!("axis {j} is not strictly increasing")));
        }
    }
    Ok(axes.iter().map(Vec::len).product())
}

fn strides(axes: &[Vec<f64>]) -> Vec<usize> {
    let mut s = vec![1; axes.len()];
    for j in (0..axes.len().saturating_sub(1)).rev() {
        s[j] = s[j + 1] * axes[j + 1].len();
    }
    s
}

/// Normalised probability masses on a product grid, stored as logs.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDistribution {
    pub axes: Vec<Vec<f64>>,
    pub log_mass: Vec<f64>,
}

impl GridDistribution {
    /// Normalises `log_unnormalised` (row-major over the axes).
    pub fn from_log_density(axes: Vec<Vec<f64>>, mut log_unnormalised: Vec<f64>) -> Result<Self, ViError> {
        let n = check_axes(&axes)?;
        if log_unnormalised.len() != n {
            return Err(ViError::Config(format!(
                "{} grid values for {n} points",
                log_unnormalised.len()
            )));
        }
        let z = log_sum_exp(&log_unnormalised);
        if !z.is_finite() {
            return Err(ViError::Underflow { factor: 0 });
        }
        log_unnormalised.iter_mut().for_each(|v| *v -= z);
        Ok(Self {
            axes,
            log_mass: log_unnormalised,
        })
    }

    pub fn uniform(axes: Vec<Vec<f64>>) -> Result<Self, ViError> {
        let n = check_axes(&axes)?;
        Self::from_log_density(axes, vec![0.0; n])
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_mass.iter().map(|v| v.exp()).collect()
    }

    pub fn marginal(&self, j: usize) -> Vec<f64> {
        let st = strides(&self.axes);
        let len = self.axes[j].len();
        let mut out = vec![0.0; len];
        for (idx, lm) in self.log_mass.iter().enumerate() {
            out[(idx / st[j]) % len] += lm.exp();
        }
        out
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.marginal(j).iter().zip(&self.axes[j]).map(|(p, x)| p * x).sum()
    }

    pub fn variance(&self, j: usize) -> f64 {
        let m = self.mean(j);
        self.marginal(j)
            .iter()
            .zip(&self.axes[j])
            .map(|(p, x)| p * (x - m).powi(2))
            .sum()
    }
}

/// Unnormalised `log ϱ` tabulated on a product grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTarget {
    pub axes: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
}

impl GridTarget {
    pub fn new(axes: Vec<Vec<f64>>, log_density: Vec<f64>) -> Result<Self, ViError> {
        let n = check_axes(&axes)?;
        if log_density.len() != n {
            return Err(ViError::Config(format!(
                "{} grid values for {n} points",
                log_density.len()
            )));
        }
        if log_density.iter().any(|v| v.is_nan()) {
            return Err(ViError::Config("grid target contains NaN".into()));
        }
        Ok(Self { axes, log_density })
    }

    /// Evaluates `f` at every grid point.
    pub fn tabulate(axes: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> f64) -> Result<Self, ViError> {
        let n = check_axes(&axes)?;
        let st = strides(&axes);
        let vals = (0..n)
            .map(|idx| {
                let x: Vec<f64> = axes.iter().zip(&st).map(|(a, &s)| a[(idx / s) % a.len()]).collect();
                f(&x)
            })
            .collect();
        Self::new(axes, vals)
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn uniform_factors(&self) -> Vec<GridDistribution> {
        self.axes
            .iter()
            .map(|a| GridDistribution::uniform(vec![a.clone()]).expect("axes validated"))
            .collect()
    }

    fn check_factors(&self, q: &[GridDistribution]) -> Result<(), ViError> {
        if q.len() != self.dims() {
            return Err(ViError::Precondition(format!(
                "{} factors for a {}-D target",
                q.len(),
                self.dims()
            )));
        }
        for (j, f) in q.iter().enumerate() {
            if f.dims() != 1 || f.axes[0] != self.axes[j] {
                return Err(ViError::Precondition(format!(
                    "factor {j} does not match target axis {j}"
                )));
            }
        }
        Ok(())
    }
}

/// Calls `visit(grid index, per-axis indices)` for every grid point.
fn for_each_point(axes: &[Vec<f64>], mut visit: impl FnMut(usize, &[usize])) {
    let st = strides(axes);
    let n: usize = axes.iter().map(Vec::len).product();
    let mut ix = vec![0; axes.len()];
    for idx in 0..n {
        for (j, a) in axes.iter().enumerate() {
            ix[j] = (idx / st[j]) % a.len();
        }
        visit(idx, &ix);
    }
}

/// `q_j ∝ exp(E_{i≠j}[log ϱ])`, with the expectation summed exactly over the grid.
pub fn cavi_update(j: usize, q: &[GridDistribution], target: &GridTarget) -> Result<GridDistribution, ViError> {
    target.check_factors(q)?;
    if j >= q.len() {
        return Err(ViError::Precondition(format!("factor {j} out of range")));
    }
    let probs: Vec<Vec<f64>> = q.iter().map(GridDistribution::probs).collect();
    let mut expect = vec![0.0; target.axes[j].len()];
    for_each_point(&target.axes, |idx, ix| {
        let w: f64 = (0..q.len()).filter(|&i| i != j).map(|i| probs[i][ix[i]]).product();
        if w > 0.0 {
            expect[ix[j]] += w * target.log_density[idx];
        }
    });
    GridDistribution::from_log_density(vec![target.axes[j].clone()], expect).map_err(|e| match e {
        ViError::Underflow { .. } => ViError::Underflow { factor: j },
        other => other,
    })
}

/// `Σ q log ϱ − Σ q log q` over grid masses.
pub fn grid_elbo(q: &[GridDistribution], target: &GridTarget) -> Result<f64, ViError> {
    target.check_factors(q)?;
    let probs: Vec<Vec<f64>> = q.iter().map(GridDistribution::probs).collect();
    let mut energy = 0.0;
    for_each_point(&target.axes, |idx, ix| {
        let w: f64 = ix.iter().enumerate().map(|(i, &k)| probs[i][k]).product();
        if w > 0.0 {
            energy += w * target.log_density[idx];
        }
    });
    let entropy: f64 = q
        .iter()
        .map(|f| {
            -f.log_mass
                .iter()
                .filter(|v| v.is_finite())
                .map(|&l| l.exp() * l)
                .sum::<f64>()
        })
        .sum();
    Ok(energy + entropy)
}

/// Updates every factor once in order.
pub fn cavi_sweep(q: &mut [GridDistribution], target: &GridTarget) -> Result<(), ViError> {
    for j in 0..q.len() {
        q[j] = cavi_update(j, q, target)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaviFit {
    pub factors: Vec<GridDistribution>,
    /// ELBO before the first sweep and after each sweep.
    pub elbo_trace: Vec<f64>,
}

/// Sweeps from uniform factors until the ELBO gain drops below `tol`.
pub fn cavi_fit(target: &GridTarget, max_sweeps: usize, tol: f64) -> Result<CaviFit, ViError> {
    let mut q = target.uniform_factors();
    let mut trace = vec![grid_elbo(&q, target)?];
    for _ in 0..max_sweeps {
        cavi_sweep(&mut q, target)?;
        let e = grid_elbo(&q, target)?;
        let gain = e - trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        trace.push(e);
        if gain.abs() < tol {
            break;
        }
    }
    Ok(CaviFit {
        factors: q,
        elbo_trace: trace,
    })
}

/// `Σ p log(p / q)` on a shared grid; `+∞` when `q` vanishes where `p` does not.
pub fn kl_grid(p: &GridDistribution, q: &GridDistribution) -> Result<f64, ViError> {
    if p.axes != q.axes {
        return Err(ViError::Precondition("grids have different supports".into()));
    }
    let mut kl = 0.0;
    for (&lp, &lq) in p.log_mass.iter().zip(&q.log_mass) {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        if lq == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        kl += lp.exp() * (lp - lq);
    }
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn correlated(rho: f64, n: usize) -> GridTarget {
        let det = 1.0 - rho * rho;
        GridTarget::tabulate(vec![axis(-6.0, 6.0, n), axis(-6.0, 6.0, n)], |x| {
            -(x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / (2.0 * det)
        })
        .unwrap()
    }

    #[test]
    fn factorised_target_recovers_marginals_in_one_sweep() {
        let ax = vec![axis(-3.0, 3.0, 31), axis(-2.0, 4.0, 41)];
        let t = GridTarget::tabulate(ax.clone(), |x| -0.5 * x[0] * x[0] - (x[1] - 1.0).abs()).unwrap();
        let mut q = t.uniform_factors();
        cavi_sweep(&mut q, &t).unwrap();
        let joint = GridDistribution::from_log_density(ax, t.log_density.clone()).unwrap();
        for j in 0..2 {
            for (a, b) in q[j].probs().iter().zip(joint.marginal(j)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlated_gaussian_fixed_point() {
        let fit = cavi_fit(&correlated(0.8, 201), 500, 1e-14).unwrap();
        for f in &fit.factors {
            assert!((f.variance(0) - 0.36).abs() < 1e-3, "{}", f.variance(0));
        }
        for w in fit.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn kl_grid_cases() {
        let ax = vec![axis(0.0, 1.0, 3)];
        let p = GridDistribution::from_log_density(ax.clone(), vec![0.0, 0.0, f64::NEG_INFINITY]).unwrap();
        let q = GridDistribution::from_log_density(ax.clone(), vec![0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(kl_grid(&p, &p).unwrap(), 0.0);
        assert_eq!(kl_grid(&p, &q).unwrap(), f64::INFINITY);
        let u = GridDistribution::uniform(ax).unwrap();
        assert!((kl_grid(&p, &u).unwrap() - (1.5f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn underflow_is_reported() {
        let t = GridTarget::new(vec![axis(0.0, 1.0, 2), axis(0.0, 1.0, 2)], vec![f64::NEG_INFINITY; 4]).unwrap();
        let q = t.uniform_factors();
        assert_eq!(cavi_update(1, &q, &t), Err(ViError::Underflow { factor: 1 }));
    }

    #[test]
    fn masses_normalised() {
        let d =
            GridDistribution::from_log_density(vec![axis(0.0, 1.0, 5)], vec![-800.0, -801.0, -799.0, -800.0, -805.0])
                .unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_oversized_grids() {
        assert!(GridDistribution::uniform(vec![axis(0.0, 1.0, 257)]).is_err());
        assert!(GridDistribution::uniform(vec![axis(0.0, 1.0, 2); 4]).is_err());
    }
}
