//! Mixture-density Poisson likelihood for halo catalogues.
//!
//! Each voxel `i` carries features `ψ_i`; the network maps them to `K`
//! log-normal components `(α, μ, σ)` over `ln m`, with `α` from a softmax and
//! `σ` from a softplus. The log-likelihood is
//!
//! ```text
//!   Σ_h log Σ_ι α_ι,i(h) N(ln m_h; μ_ι,i(h), σ_ι,i(h))
//! − V Σ_i Σ_ι (α_ι,i / 2) exp(σ²_ι,i / 2) erfc[(ln m_τ − μ_ι,i − σ²_ι,i) / √(2σ²_ι,i)]
//! ```
//!
//! The second term equals `V ∫_{ln m_τ}^∞ n_i(x) dx` for the intensity
//! `n_i(x) = Σ_ι α_ι,i N(x; μ_ι,i, σ_ι,i) exp(x − μ_ι,i)`, which is what
//! [`MdnPoisson::expected_count`] and [`simulate_catalogue`] use.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::autodiff::{Graph, Var};
use crate::error::ModelError;
use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, softplus, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct MdnPoisson {
    pub components: usize,
    /// Minimum halo mass `m_τ` (linear units, > 0).
    pub mass_threshold: f64,
    pub voxel_volume: f64,
    /// Flip the overall sign of the returned value.
    pub negate: bool,
}

impl MdnPoisson {
    pub fn new(components: usize, mass_threshold: f64, voxel_volume: f64) -> Self {
        Self {
            components,
            mass_threshold,
            voxel_volume,
            negate: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.components < 1 {
            return Err(ModelError::Config("mdn-poisson needs at least one component".into()));
        }
        if !(self.voxel_volume > 0.0) {
            return Err(ModelError::Config("voxel volume must be positive".into()));
        }
        if !(self.mass_threshold > 0.0) {
            return Err(ModelError::Config("mass threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn log_threshold(&self) -> f64 {
        self.mass_threshold.ln()
    }

    /// Splits one voxel's raw outputs into mixture components.
    pub fn components_of<S: Scalar>(&self, outputs: &[S]) -> Vec<MixtureComponent<S>> {
        let k = self.components;
        assert_eq!(outputs.len(), 3 * k, "mdn output width");
        let lse = log_sum_exp(&outputs[..k]);
        (0..k)
            .map(|c| MixtureComponent {
                weight: (outputs[c] - lse).exp(),
                mean: outputs[k + c],
                sigma: softplus(outputs[2 * k + c]),
            })
            .collect()
    }

    /// Completion term of one component, `V (α/2) e^{σ²/2} erfc[(ln m_τ − μ − σ²)/√(2σ²)]`.
    pub fn completion<S: Scalar>(&self, c: &MixtureComponent<S>) -> S {
        let v = S::lit(self.voxel_volume);
        let t = S::lit(self.log_threshold());
        let s2 = c.sigma * c.sigma;
        let arg = (t - c.mean - s2) / (S::lit(2.0) * s2).sqrt();
        v * c.weight * S::lit(0.5) * (s2 * S::lit(0.5)).exp() * arg.erfc()
    }

    /// Poisson intensity per unit `ln m` and unit volume.
    pub fn intensity<S: Scalar>(&self, comps: &[MixtureComponent<S>], log_mass: S) -> S {
        comps
            .iter()
            .map(|c| {
                let z = (log_mass - c.mean) / c.sigma;
                c.weight * (-(z * z) * S::lit(0.5)).exp() / (c.sigma * S::TAU().sqrt()) * (log_mass - c.mean).exp()
            })
            .sum()
    }

    /// Expected number of halos with `ln m ∈ [lo, hi)` in one voxel.
    pub fn expected_count<S: Scalar>(&self, comps: &[MixtureComponent<S>], lo: S, hi: S) -> S {
        let v = S::lit(self.voxel_volume);
        comps
            .iter()
            .map(|c| {
                let s2 = c.sigma * c.sigma;
                let scale = (S::lit(2.0) * s2).sqrt();
                let shifted = c.mean + s2;
                let upper = ((lo - shifted) / scale).erfc();
                let lower = ((hi - shifted) / scale).erfc();
                v * c.weight * S::lit(0.5) * (s2 * S::lit(0.5)).exp() * (upper - lower)
            })
            .sum()
    }

    /// Records the log-likelihood over all voxels on `g`.
    pub fn build<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        voxel_outputs: &[Vec<Var>],
        catalogue: &HaloCatalogue<S>,
    ) -> Result<Var, ModelError> {
        self.validate()?;
        catalogue.validate(voxel_outputs.len())?;
        let k = self.components;
        let half_ln_2pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let t = S::lit(self.log_threshold());
        let mut per_voxel = Vec::with_capacity(voxel_outputs.len());
        for outs in voxel_outputs {
            if outs.len() != 3 * k {
                return Err(ModelError::Config(format!(
                    "mdn voxel has {} outputs, expected {}",
                    outs.len(),
                    3 * k
                )));
            }
            let lse = g.log_sum_exp(&outs[..k]);
            let mut comps = Vec::with_capacity(k);
            for c in 0..k {
                let log_alpha = g.sub(outs[c], lse);
                let sigma = g.softplus(outs[2 * k + c]);
                let log_sigma = g.log(sigma);
                let var = g.square(sigma);
                comps.push((log_alpha, outs[k + c], sigma, log_sigma, var));
            }
            per_voxel.push(comps);
        }

        let mut halo_terms = Vec::with_capacity(catalogue.len());
        for (&vox, &x) in catalogue.halo_voxel.iter().zip(&catalogue.halo_log_mass) {
            let mut logs = Vec::with_capacity(k);
            for &(log_alpha, mu, _sigma, log_sigma, var) in &per_voxel[vox] {
                let xc = g.constant(x);
                let d = g.sub(xc, mu);
                let d2 = g.square(d);
                let q = g.div(d2, var);
                let q = g.scale(q, S::lit(-0.5));
                let a = g.sub(log_alpha, log_sigma);
                let a = g.add(a, q);
                logs.push(g.add_const(a, -half_ln_2pi));
            }
            halo_terms.push(g.log_sum_exp(&logs));
        }

        let mut completion = Vec::with_capacity(per_voxel.len() * k);
        for comps in &per_voxel {
            for &(log_alpha, mu, _sigma, _log_sigma, var) in comps {
                let tc = g.constant(t);
                let num = g.sub(tc, mu);
                let num = g.sub(num, var);
                let two_var = g.scale(var, S::lit(2.0));
                let den = g.sqrt(two_var);
                let arg = g.div(num, den);
                let erfc = g.erfc(arg);
                let half_var = g.scale(var, S::lit(0.5));
                let e = g.add(log_alpha, half_var);
                let e = g.exp(e);
                completion.push(g.mul(e, erfc));
            }
        }
        let first = g.sum(&halo_terms);
        let second = g.sum(&completion);
        let second = g.scale(second, S::lit(0.5 * self.voxel_volume));
        let total = g.sub(first, second);
        Ok(if self.negate { g.neg(total) } else { total })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureComponent<S> {
    pub weight: S,
    pub mean: S,
    pub sigma: S,
}

/// Voxel features plus the observed halos (voxel index and `ln m`).
#[derive(Clone, Debug, PartialEq)]
pub struct HaloCatalogue<S> {
    pub voxel_features: Matrix<S>,
    pub halo_voxel: Vec<usize>,
    pub halo_log_mass: Vec<S>,
}

impl<S: Scalar> HaloCatalogue<S> {
    pub fn len(&self) -> usize {
        self.halo_voxel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.halo_voxel.is_empty()
    }

    pub fn n_voxels(&self) -> usize {
        self.voxel_features.rows()
    }

    fn validate(&self, n_voxels: usize) -> Result<(), ModelError> {
        if self.halo_voxel.len() != self.halo_log_mass.len() {
            return Err(ModelError::Config("halo voxel and mass lists differ in length".into()));
        }
        if let Some(&v) = self.halo_voxel.iter().find(|&&v| v >= n_voxels) {
            return Err(ModelError::Config(format!("halo refers to voxel {v} of {n_voxels}")));
        }
        Ok(())
    }

    /// Halo counts per `ln m` bin; `edges` are increasing bin boundaries.
    pub fn counts_per_bin(&self, edges: &[S]) -> Vec<usize> {
        let mut counts = vec![0; edges.len().saturating_sub(1)];
        for &x in &self.halo_log_mass {
            if let Some(b) = edges.windows(2).position(|e| x >= e[0] && x < e[1]) {
                counts[b] += 1;
            }
        }
        counts
    }
}

/// Value of the mdn-poisson log-likelihood for raw outputs `r` (one row per voxel).
pub fn mdn_log_likelihood<S: Scalar>(
    head: &MdnPoisson,
    r: &Matrix<S>,
    catalogue: &HaloCatalogue<S>,
) -> Result<S, ModelError> {
    let mut g = Graph::new(r.rows() * r.cols());
    let vars = g.params();
    let voxels: Vec<Vec<Var>> = vars.chunks(r.cols()).map(<[Var]>::to_vec).collect();
    head.build(&mut g, &voxels, catalogue)?;
    Ok(g.forward(r.as_slice())?)
}

/// Draws a catalogue from the Poisson process with intensity `V n_i(x)` on
/// `x > ln m_τ` for every voxel.
pub fn simulate_catalogue<R: Rng + ?Sized>(
    head: &MdnPoisson,
    voxel_features: Matrix<f64>,
    voxel_components: &[Vec<MixtureComponent<f64>>],
    rng: &mut R,
) -> HaloCatalogue<f64> {
    let t = head.log_threshold();
    let mut halo_voxel = Vec::new();
    let mut halo_log_mass = Vec::new();
    for (i, comps) in voxel_components.iter().enumerate() {
        let per_comp: Vec<f64> = comps.iter().map(|c| head.completion(c)).collect();
        let total: f64 = per_comp.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let n = Poisson::new(total).map(|p| p.sample(rng) as usize).unwrap_or(0);
        for _ in 0..n {
            // component chosen in proportion to its mass above threshold
            let mut u = rng.random::<f64>() * total;
            let mut pick = comps.len() - 1;
            for (c, &w) in per_comp.iter().enumerate() {
                if u < w {
                    pick = c;
                    break;
                }
                u -= w;
            }
            let c = comps[pick];
            // n(x) ∝ N(x; μ + σ², σ) on x > t
            let centre = c.mean + c.sigma * c.sigma;
            let x = truncated_normal_above(centre, c.sigma, t, rng);
            halo_voxel.push(i);
            halo_log_mass.push(x);
        }
    }
    HaloCatalogue {
        voxel_features,
        halo_voxel,
        halo_log_mass,
    }
}

fn truncated_normal_above<R: Rng + ?Sized>(mean: f64, sd: f64, lower: f64, rng: &mut R) -> f64 {
    let a = (lower - mean) / sd;
    if a < 2.0 {
        loop {
            let z: f64 = f64::std_normal(rng);
            if z > a {
                return mean + sd * z;
            }
        }
    }
    // exponential proposal for the far tail
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - rng.random::<f64>().ln() / lambda;
        let accept = (-(z - lambda).powi(2) / 2.0).exp();
        if rng.random::<f64>() < accept {
            return mean + sd * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_catalogue_leaves_only_completion() {
        let head = MdnPoisson::new(1, 10.0, 2.5);
        let (mu, sigma_raw) = (2.0, 0.3);
        let r = Matrix::from_rows(&[vec![0.7, mu, sigma_raw]]);
        let cat = HaloCatalogue {
            voxel_features: Matrix::from_rows(&[vec![0.0]]),
            halo_voxel: vec![],
            halo_log_mass: vec![],
        };
        let ll = mdn_log_likelihood(&head, &r, &cat).unwrap();
        let s = softplus(sigma_raw);
        let arg = (10f64.ln() - mu - s * s) / (2.0 * s * s).sqrt();
        let expected = -2.5 * 0.5 * (s * s / 2.0).exp() * libm::erfc(arg);
        assert!((ll - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn negate_flag_flips_sign() {
        let mut head = MdnPoisson::new(2, 5.0, 1.0);
        let r = Matrix::from_rows(&[vec![0.1, -0.3, 1.5, 2.2, 0.2, -0.4]]);
        let cat = HaloCatalogue {
            voxel_features: Matrix::from_rows(&[vec![0.0]]),
            halo_voxel: vec![0, 0],
            halo_log_mass: vec![1.9, 2.4],
        };
        let a = mdn_log_likelihood(&head, &r, &cat).unwrap();
        head.negate = true;
        let b = mdn_log_likelihood(&head, &r, &cat).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn halo_term_is_log_mixture_density() {
        let head = MdnPoisson::new(2, 1e-3, 1e-9);
        let raw = vec![0.1, -0.3, 1.5, 2.2, 0.2, -0.4];
        let r = Matrix::from_rows(std::slice::from_ref(&raw));
        let cat = HaloCatalogue {
            voxel_features: Matrix::from_rows(&[vec![0.0]]),
            halo_voxel: vec![0],
            halo_log_mass: vec![1.8],
        };
        let ll = mdn_log_likelihood(&head, &r, &cat).unwrap();
        let comps: Vec<MixtureComponent<f64>> = head.components_of(&raw);
        let dens: f64 = comps
            .iter()
            .map(|c| {
                let z = (1.8 - c.mean) / c.sigma;
                c.weight * (-0.5 * z * z).exp() / (c.sigma * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum();
        let completion: f64 = comps.iter().map(|c| head.completion(c)).sum();
        assert!((ll - (dens.ln() - completion)).abs() < 1e-12);
    }

    #[test]
    fn expected_count_above_threshold_equals_completion() {
        let head = MdnPoisson::new(1, 3.0, 4.0);
        let c = MixtureComponent {
            weight: 1.0,
            mean: 1.2,
            sigma: 0.4,
        };
        let total = head.expected_count(&[c], head.log_threshold(), f64::INFINITY);
        assert!((total - head.completion(&c)).abs() < 1e-12);
    }

    #[test]
    fn simulated_counts_track_expectation() {
        let head = MdnPoisson::new(1, 3.0, 20.0);
        let comps = vec![
            vec![MixtureComponent {
                weight: 1.0,
                mean: 1.2,
                sigma: 0.4
            }];
            50
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cat = simulate_catalogue(&head, Matrix::zeros(50, 1), &comps, &mut rng);
        let expected = 50.0 * head.completion(&comps[0][0]);
        let n = cat.len() as f64;
        assert!((n - expected).abs() < 4.0 * expected.sqrt(), "{n} vs {expected}");
        assert!(cat.halo_log_mass.iter().all(|&x| x > 3f64.ln()));
    }
}
