//! Likelihood heads `ℓ(y | x, w)` attached to network outputs.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::ModelError;
use crate::linalg::Matrix;
use crate::models::mdn::MdnPoisson;
use crate::scalar::{ln_choose, sigmoid, softplus, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub enum LikelihoodHead {
    /// `y ~ N(r, I)`.
    UnitGaussian,
    /// `y ~ N(μ, L Lᵀ)`; outputs are `μ` followed by the row-major lower
    /// triangle of `L`, whose diagonal passes through softplus.
    HeteroscedasticGaussian,
    /// `y` is a class index; outputs are logits.
    Categorical { classes: usize },
    /// `y = k` successes out of `trials`; one logit mapped through the logistic.
    Binomial { trials: u32 },
    /// Poisson halo-count likelihood over voxels (see [`MdnPoisson`]).
    MdnPoisson(MdnPoisson),
}

impl LikelihoodHead {
    pub fn name(&self) -> &'static str {
        match self {
            LikelihoodHead::UnitGaussian => "unit-gaussian",
            LikelihoodHead::HeteroscedasticGaussian => "heteroscedastic-gaussian",
            LikelihoodHead::Categorical { .. } => "categorical",
            LikelihoodHead::Binomial { .. } => "binomial",
            LikelihoodHead::MdnPoisson(_) => "mdn-poisson",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            LikelihoodHead::Binomial { trials } if *trials < 1 => {
                Err(ModelError::Config("binomial head needs at least one trial".into()))
            }
            LikelihoodHead::Categorical { classes } if *classes < 2 => {
                Err(ModelError::Config("categorical head needs at least two classes".into()))
            }
            LikelihoodHead::MdnPoisson(m) => m.validate(),
            _ => Ok(()),
        }
    }

    pub fn accepts_output_width(&self, w: usize) -> bool {
        match self {
            LikelihoodHead::UnitGaussian => w >= 1,
            LikelihoodHead::HeteroscedasticGaussian => hetero_dim(w).is_some(),
            LikelihoodHead::Categorical { classes } => w == *classes,
            LikelihoodHead::Binomial { .. } => w == 1,
            LikelihoodHead::MdnPoisson(m) => w == 3 * m.components,
        }
    }

    /// Number of target columns expected for a given output width.
    pub fn target_width(&self, output_width: usize) -> usize {
        match self {
            LikelihoodHead::UnitGaussian => output_width,
            LikelihoodHead::HeteroscedasticGaussian => hetero_dim(output_width).unwrap_or(0),
            LikelihoodHead::Categorical { .. } | LikelihoodHead::Binomial { .. } => 1,
            LikelihoodHead::MdnPoisson(_) => 0,
        }
    }

    /// Records `log ℓ(target | outputs)` for one data element.
    pub fn build_element<S: Scalar>(&self, g: &mut Graph<S>, outputs: &[Var], target: &[S]) -> Result<Var, ModelError> {
        let half_ln_2pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        match self {
            LikelihoodHead::UnitGaussian => {
                expect_len(target.len(), outputs.len(), "target")?;
                let mut sq = Vec::with_capacity(outputs.len());
                for (&o, &y) in outputs.iter().zip(target) {
                    let yc = g.constant(y);
                    let r = g.sub(yc, o);
                    sq.push(g.square(r));
                }
                let s = g.sum(&sq);
                let half = g.scale(s, S::lit(-0.5));
                let c = -half_ln_2pi * S::from_usize(outputs.len()).unwrap();
                Ok(g.add_const(half, c))
            }
            LikelihoodHead::HeteroscedasticGaussian => {
                let d = hetero_dim(outputs.len())
                    .ok_or_else(|| ModelError::Config("bad heteroscedastic output width".into()))?;
                expect_len(target.len(), d, "target")?;
                let mu = &outputs[..d];
                let tri = &outputs[d..];
                // Forward substitution z = L⁻¹ (y − μ); log det Σ = 2 Σ log L_ii.
                let mut z: Vec<Var> = Vec::with_capacity(d);
                let mut log_diag = Vec::with_capacity(d);
                let mut k = 0;
                for i in 0..d {
                    let yc = g.constant(target[i]);
                    let mut resid = g.sub(yc, mu[i]);
                    if i > 0 {
                        let lz = g.dot(&tri[k..k + i], &z);
                        resid = g.sub(resid, lz);
                    }
                    let lii = g.softplus(tri[k + i]);
                    log_diag.push(g.log(lii));
                    z.push(g.div(resid, lii));
                    k += i + 1;
                }
                let quad = g.dot(&z, &z);
                let quad = g.scale(quad, S::lit(-0.5));
                let ld = g.sum(&log_diag);
                let out = g.sub(quad, ld);
                Ok(g.add_const(out, -half_ln_2pi * S::from_usize(d).unwrap()))
            }
            LikelihoodHead::Categorical { classes } => {
                expect_len(target.len(), 1, "target")?;
                let c = class_index(target[0], *classes)?;
                let lse = g.log_sum_exp(outputs);
                Ok(g.sub(outputs[c], lse))
            }
            LikelihoodHead::Binomial { trials } => {
                expect_len(target.len(), 1, "target")?;
                let n = *trials as u64;
                let k = count_value(target[0], n)?;
                let log_p = g.log_sigmoid(outputs[0]);
                let neg = g.neg(outputs[0]);
                let log_q = g.log_sigmoid(neg);
                let a = g.scale(log_p, S::from_u64(k).unwrap());
                let b = g.scale(log_q, S::from_u64(n - k).unwrap());
                let s = g.add(a, b);
                Ok(g.add_const(s, S::lit(ln_choose(n, k))))
            }
            LikelihoodHead::MdnPoisson(_) => Err(ModelError::Config(
                "the mdn-poisson head is evaluated over a halo catalogue, not per row".into(),
            )),
        }
    }

    /// `E[y | outputs]`: the mean for Gaussian heads, class probabilities for
    /// the categorical head and the success rate for the binomial head.
    pub fn expected<S: Scalar>(&self, outputs: &[S]) -> Vec<S> {
        match self {
            LikelihoodHead::UnitGaussian => outputs.to_vec(),
            LikelihoodHead::HeteroscedasticGaussian => {
                let d = hetero_dim(outputs.len()).unwrap_or(0);
                outputs[..d].to_vec()
            }
            LikelihoodHead::Categorical { .. } => softmax(outputs),
            LikelihoodHead::Binomial { .. } => vec![sigmoid(outputs[0])],
            LikelihoodHead::MdnPoisson(_) => Vec::new(),
        }
    }

    /// Draws `y ~ ℓ(y | outputs)`. Binomial draws are reported as success
    /// fractions `k / trials`; categorical draws as the class index.
    pub fn sample<S: Scalar, R: Rng + ?Sized>(&self, outputs: &[S], rng: &mut R) -> Vec<S> {
        match self {
            LikelihoodHead::UnitGaussian => outputs.iter().map(|&r| r + S::std_normal(rng)).collect(),
            LikelihoodHead::HeteroscedasticGaussian => {
                let d = hetero_dim(outputs.len()).unwrap_or(0);
                let l = cholesky_from_outputs(&outputs[d..], d);
                let z: Vec<S> = (0..d).map(|_| S::std_normal(rng)).collect();
                let lz = l.matvec(&z);
                outputs[..d].iter().zip(lz).map(|(&m, e)| m + e).collect()
            }
            LikelihoodHead::Categorical { .. } => {
                let p = softmax(outputs);
                let u = S::unit_uniform(rng);
                let mut acc = S::zero();
                let mut pick = p.len() - 1;
                for (i, &pi) in p.iter().enumerate() {
                    acc = acc + pi;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                vec![S::from_usize(pick).unwrap()]
            }
            LikelihoodHead::Binomial { trials } => {
                let p = sigmoid(outputs[0]);
                let k = (0..*trials).filter(|_| S::unit_uniform(rng) < p).count();
                vec![S::from_usize(k).unwrap() / S::from_u32(*trials).unwrap()]
            }
            LikelihoodHead::MdnPoisson(_) => Vec::new(),
        }
    }
}

/// Sum over rows of `log ℓ(y | r)` for network outputs `r`.
pub fn log_likelihood<S: Scalar>(head: &LikelihoodHead, r: &Matrix<S>, targets: &Matrix<S>) -> Result<S, ModelError> {
    if r.rows() != targets.rows() {
        return Err(ModelError::Config(format!(
            "{} output rows but {} target rows",
            r.rows(),
            targets.rows()
        )));
    }
    let mut g = Graph::new(r.rows() * r.cols());
    let vars = g.params();
    let mut terms = Vec::with_capacity(r.rows());
    for i in 0..r.rows() {
        let outs = &vars[i * r.cols()..(i + 1) * r.cols()];
        terms.push(head.build_element(&mut g, outs, targets.row(i))?);
    }
    g.sum(&terms);
    Ok(g.forward(r.as_slice())?)
}

/// `log Bin(k; n, p)`, returning `-inf` when `p` puts zero mass on `k`.
pub fn binomial_log_pmf<S: Scalar>(p: S, n: u64, k: u64) -> S {
    let c = S::lit(ln_choose(n, k));
    let kk = S::from_u64(k).unwrap();
    let nk = S::from_u64(n - k).unwrap();
    let term = |count: S, prob: S| {
        if count == S::zero() {
            S::zero()
        } else if prob == S::zero() {
            S::neg_infinity()
        } else {
            count * prob.ln()
        }
    };
    c + term(kk, p) + term(nk, S::one() - p)
}

pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let lse = crate::scalar::log_sum_exp(logits);
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

/// Lower-triangular factor from raw head outputs (softplus diagonal).
pub fn cholesky_from_outputs<S: Scalar>(tri: &[S], d: usize) -> Matrix<S> {
    let mut l = Matrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = if i == j { softplus(tri[k]) } else { tri[k] };
            k += 1;
        }
    }
    l
}

/// `d` such that `d + d(d+1)/2 = w`.
pub fn hetero_dim(w: usize) -> Option<usize> {
    (1..=w).find(|&d| d + d * (d + 1) / 2 == w)
}

fn expect_len(got: usize, want: usize, what: &str) -> Result<(), ModelError> {
    if got != want {
        return Err(ModelError::Config(format!("{what} has {got} columns, expected {want}")));
    }
    Ok(())
}

fn class_index<S: Scalar>(y: S, classes: usize) -> Result<usize, ModelError> {
    let c = y.round();
    if (c - y).abs() > S::lit(1e-9) || c < S::zero() || c.to_usize().is_none_or(|c| c >= classes) {
        return Err(ModelError::Config(format!("class label {y} is not in 0..{classes}")));
    }
    Ok(c.to_usize().unwrap())
}

fn count_value<S: Scalar>(y: S, n: u64) -> Result<u64, ModelError> {
    let c = y.round();
    if (c - y).abs() > S::lit(1e-9) || c < S::zero() || c.to_u64().is_none_or(|c| c > n) {
        return Err(ModelError::Config(format!("count {y} is not in 0..={n}")));
    }
    Ok(c.to_u64().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn one_row(v: &[f64]) -> Matrix<f64> {
        Matrix::from_rows(&[v.to_vec()])
    }

    #[test]
    fn binomial_even_odds() {
        // logit 0 is a success probability of one half
        let head = LikelihoodHead::Binomial { trials: 2 };
        let ll = log_likelihood(&head, &one_row(&[0.0]), &one_row(&[1.0])).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-14);
        assert!((binomial_log_pmf(0.5, 2, 1) - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn binomial_zero_probability_is_neg_infinity() {
        assert_eq!(binomial_log_pmf(0.0_f64, 3, 1), f64::NEG_INFINITY);
        assert_eq!(binomial_log_pmf(0.0_f64, 3, 0), 0.0);
        assert_eq!(binomial_log_pmf(1.0_f64, 3, 2), f64::NEG_INFINITY);
    }

    #[test]
    fn unit_gaussian_zero_residual() {
        let head = LikelihoodHead::UnitGaussian;
        let y = one_row(&[0.3, -1.0, 2.0]);
        let ll = log_likelihood(&head, &y, &y).unwrap();
        assert!((ll + 1.5 * (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn categorical_uniform_logits() {
        let head = LikelihoodHead::Categorical { classes: 3 };
        let ll = log_likelihood(&head, &one_row(&[0.0, 0.0, 0.0]), &one_row(&[2.0])).unwrap();
        assert!((ll - (1.0f64 / 3.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn categorical_rejects_bad_label() {
        let head = LikelihoodHead::Categorical { classes: 3 };
        assert!(log_likelihood(&head, &one_row(&[0.0, 0.0, 0.0]), &one_row(&[3.0])).is_err());
        assert!(log_likelihood(&head, &one_row(&[0.0, 0.0, 0.0]), &one_row(&[0.5])).is_err());
    }

    #[test]
    fn heteroscedastic_matches_direct_formula() {
        // d = 2: outputs μ (2) + L entries (l00, l10, l11)
        let raw = [0.4, -0.2, 0.3, 0.7, -0.5];
        let y = [1.0, 0.5];
        let head = LikelihoodHead::HeteroscedasticGaussian;
        let ll = log_likelihood(&head, &one_row(&raw), &one_row(&y)).unwrap();

        let l = cholesky_from_outputs(&raw[2..], 2);
        let sigma = l.matmul(&l.transpose());
        let ch = sigma.cholesky().unwrap();
        let r = [y[0] - raw[0], y[1] - raw[1]];
        let quad = crate::linalg::dot(&r, &ch.solve(&r));
        let expected = -0.5 * quad - 0.5 * ch.log_det() - (2.0 * PI).ln();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn hetero_dims() {
        assert_eq!(hetero_dim(2), Some(1));
        assert_eq!(hetero_dim(5), Some(2));
        assert_eq!(hetero_dim(9), Some(3));
        assert_eq!(hetero_dim(4), None);
    }

    #[test]
    fn expectations() {
        assert_eq!(LikelihoodHead::Binomial { trials: 4 }.expected(&[0.0]), vec![0.5]);
        let p = LikelihoodHead::Categorical { classes: 2 }.expected(&[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }
}
