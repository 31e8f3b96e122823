use std::collections::BTreeMap;

use crate::error::ModelError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PriorKind {
    /// `N(0, σ_p²)` per parameter.
    IsotropicGaussian {
        sigma: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
}

impl PriorKind {
    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            PriorKind::IsotropicGaussian { sigma } if !(sigma > 0.0) => {
                Err(ModelError::Config(format!("prior σ must be positive, got {sigma}")))
            }
            PriorKind::Uniform { lower, upper } if !(lower < upper) => Err(ModelError::Config(format!(
                "uniform prior needs lower < upper, got [{lower}, {upper}]"
            ))),
            _ => Ok(()),
        }
    }

    fn log_density<S: Scalar>(&self, w: S) -> (S, S) {
        match *self {
            PriorKind::IsotropicGaussian { sigma } => {
                let s = S::lit(sigma);
                let z = w / s;
                let c = S::lit(-0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln());
                (c - z * z * S::lit(0.5), -w / (s * s))
            }
            PriorKind::Uniform { lower, upper } => {
                let (lo, hi) = (S::lit(lower), S::lit(upper));
                if w < lo || w > hi {
                    (S::neg_infinity(), S::zero())
                } else {
                    (-S::lit((upper - lower).ln()), S::zero())
                }
            }
        }
    }
}

/// Independent prior over the parameters with optional per-index overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub default: PriorKind,
    pub overrides: BTreeMap<usize, PriorKind>,
}

impl PriorSpec {
    pub fn isotropic(sigma: f64) -> Self {
        Self {
            default: PriorKind::IsotropicGaussian { sigma },
            overrides: BTreeMap::new(),
        }
    }

    pub fn uniform(lower: f64, upper: f64) -> Self {
        Self {
            default: PriorKind::Uniform { lower, upper },
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, index: usize, kind: PriorKind) -> Self {
        self.overrides.insert(index, kind);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.default.validate()?;
        self.overrides.values().try_for_each(PriorKind::validate)
    }

    pub fn kind(&self, i: usize) -> &PriorKind {
        self.overrides.get(&i).unwrap_or(&self.default)
    }

    /// `log p(w)` including normalising constants, and its gradient.
    /// Outside a uniform support the value is `-inf` and the gradient zero.
    pub fn log_prior_and_grad<S: Scalar>(&self, params: &[S]) -> (S, Vec<S>) {
        let mut total = S::zero();
        let mut grad = Vec::with_capacity(params.len());
        for (i, &w) in params.iter().enumerate() {
            let (v, g) = self.kind(i).log_density(w);
            total = total + v;
            grad.push(g);
        }
        (total, grad)
    }
}

pub fn log_prior<S: Scalar>(prior: &PriorSpec, params: &[S]) -> S {
    prior.log_prior_and_grad(params).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn isotropic_at_origin() {
        let v = log_prior(&PriorSpec::isotropic(1.0), &[0.0, 0.0]);
        assert!((v + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn uniform_inside_and_outside() {
        let p = PriorSpec::uniform(-1.0, 1.0);
        assert!((log_prior(&p, &[0.2, -0.9, 0.0]) + 3.0 * 2f64.ln()).abs() < 1e-14);
        assert_eq!(log_prior(&p, &[0.2, 1.5]), f64::NEG_INFINITY);
    }

    #[test]
    fn isotropic_wider_prior() {
        let v = log_prior(&PriorSpec::isotropic(2.0), &[2.0, 0.0]);
        let expected = -0.5 - 2.0 * (2.0 * (2.0 * PI).sqrt()).ln();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn overrides_apply_per_index() {
        let p = PriorSpec::isotropic(1.0).with_override(1, PriorKind::Uniform { lower: 0.0, upper: 4.0 });
        let (v, g) = p.log_prior_and_grad(&[1.0, 3.0]);
        let expected = -0.5 * (2.0 * PI).ln() - 0.5 - 4f64.ln();
        assert!((v - expected).abs() < 1e-14);
        assert_eq!(g, vec![-1.0, 0.0]);
    }

    #[test]
    fn validation() {
        assert!(PriorSpec::isotropic(0.0).validate().is_err());
        assert!(PriorSpec::uniform(1.0, 1.0).validate().is_err());
        assert!(PriorSpec::isotropic(0.5).validate().is_ok());
    }
}
