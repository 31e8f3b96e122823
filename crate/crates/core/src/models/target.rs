//! Unnormalised log posteriors `log ϱ(λ|χ) = log L(χ|λ) + log p(λ)`.

use crate::autodiff::{Graph, Var};
use crate::error::ModelError;
use crate::linalg::{Cholesky, Matrix};
use crate::models::data::Dataset;
use crate::models::heads::LikelihoodHead;
use crate::models::mdn::HaloCatalogue;
use crate::models::network::NetworkSpec;
use crate::models::prior::PriorSpec;
use crate::scalar::Scalar;

/// Anything that can report `log ϱ(λ)` and its gradient.
pub trait LogDensity<S: Scalar> {
    fn dim(&self) -> usize;

    fn log_density_and_grad(&self, x: &[S]) -> Result<(S, Vec<S>), ModelError>;

    fn log_density(&self, x: &[S]) -> Result<S, ModelError> {
        Ok(self.log_density_and_grad(x)?.0)
    }

    /// Fisher information at `x`, when the target knows it in closed form.
    fn expected_fisher(&self, _x: &[S]) -> Option<Matrix<S>> {
        None
    }

    /// The likelihood/prior split, for kernels that subsample data.
    fn as_model(&self) -> Option<&dyn BayesianModel<S>> {
        None
    }
}

impl<S: Scalar, T: LogDensity<S> + ?Sized> LogDensity<S> for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density_and_grad(&self, x: &[S]) -> Result<(S, Vec<S>), ModelError> {
        (**self).log_density_and_grad(x)
    }
    fn log_density(&self, x: &[S]) -> Result<S, ModelError> {
        (**self).log_density(x)
    }
    fn expected_fisher(&self, x: &[S]) -> Option<Matrix<S>> {
        (**self).expected_fisher(x)
    }
    fn as_model(&self) -> Option<&dyn BayesianModel<S>> {
        (**self).as_model()
    }
}

/// A target that separates into likelihood over data elements and a prior.
pub trait BayesianModel<S: Scalar>: LogDensity<S> {
    fn n_data(&self) -> usize;

    /// `Σ_{n ∈ rows} log ℓ_n` (all rows when `None`) and its gradient. Unscaled.
    fn log_likelihood_and_grad(&self, x: &[S], rows: Option<&[usize]>) -> Result<(S, Vec<S>), ModelError>;

    fn log_prior_and_grad(&self, x: &[S]) -> (S, Vec<S>);
}

/// `(log_likelihood + log_prior, gradient)`; the shared body of
/// [`LogDensity::log_density_and_grad`] for every [`BayesianModel`].
pub fn posterior_from_parts<S: Scalar, M: BayesianModel<S> + ?Sized>(
    model: &M,
    x: &[S],
) -> Result<(S, Vec<S>), ModelError> {
    let (lp, gp) = model.log_prior_and_grad(x);
    if lp == S::neg_infinity() {
        return Ok((lp, vec![S::zero(); x.len()]));
    }
    let (ll, gl) = model.log_likelihood_and_grad(x, None)?;
    Ok((ll + lp, gl.iter().zip(&gp).map(|(&a, &b)| a + b).collect()))
}

/// Value and gradient of the unnormalised log posterior.
pub fn unnorm_log_posterior<S: Scalar, T: LogDensity<S> + ?Sized>(
    target: &T,
    params: &[S],
) -> Result<(S, Vec<S>), ModelError> {
    if params.len() != target.dim() {
        return Err(ModelError::Config(format!(
            "parameter vector has length {}, target has dimension {}",
            params.len(),
            target.dim()
        )));
    }
    target.log_density_and_grad(params)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observations<S> {
    Rows(Dataset<S>),
    Catalogue(HaloCatalogue<S>),
}

/// Posterior over the weights of a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTarget<S> {
    pub spec: NetworkSpec,
    pub prior: PriorSpec,
    pub observations: Observations<S>,
}

impl<S: Scalar> NetworkTarget<S> {
    pub fn new(spec: NetworkSpec, prior: PriorSpec, observations: Observations<S>) -> Result<Self, ModelError> {
        spec.validate()?;
        prior.validate()?;
        match (&spec.head, &observations) {
            (LikelihoodHead::MdnPoisson(_), Observations::Catalogue(c)) => {
                if c.voxel_features.cols() != spec.input_width() {
                    return Err(ModelError::Config("voxel features do not match input width".into()));
                }
            }
            (LikelihoodHead::MdnPoisson(_), Observations::Rows(_)) => {
                return Err(ModelError::Config("mdn-poisson head needs a halo catalogue".into()));
            }
            (_, Observations::Catalogue(_)) => {
                return Err(ModelError::Config("a halo catalogue needs the mdn-poisson head".into()));
            }
            (head, Observations::Rows(d)) => {
                d.validate()?;
                if d.inputs.cols() != spec.input_width() {
                    return Err(ModelError::Config("dataset inputs do not match input width".into()));
                }
                if d.targets.cols() != head.target_width(spec.output_width()) {
                    return Err(ModelError::Config(format!(
                        "dataset has {} target columns, head expects {}",
                        d.targets.cols(),
                        head.target_width(spec.output_width())
                    )));
                }
            }
        }
        Ok(Self {
            spec,
            prior,
            observations,
        })
    }

    /// Records `Σ log ℓ` for the selected rows on a fresh graph.
    pub fn likelihood_graph(&self, rows: Option<&[usize]>) -> Result<Graph<S>, ModelError> {
        let mut g = Graph::new(self.spec.param_count());
        let params = g.params();
        match &self.observations {
            Observations::Rows(d) => {
                let all: Vec<usize>;
                let idx = match rows {
                    Some(r) => r,
                    None => {
                        all = (0..d.len()).collect();
                        &all
                    }
                };
                let mut terms = Vec::with_capacity(idx.len());
                for &i in idx {
                    let out = self.spec.build(&mut g, &params, d.inputs.row(i), None)?;
                    terms.push(self.spec.head.build_element(&mut g, &out, d.targets.row(i))?);
                }
                g.sum(&terms);
            }
            Observations::Catalogue(c) => {
                if rows.is_some() {
                    return Err(ModelError::Config("catalogue likelihood has no row subsets".into()));
                }
                let LikelihoodHead::MdnPoisson(head) = &self.spec.head else {
                    unreachable!("validated in constructor")
                };
                let voxels: Vec<Vec<Var>> = c
                    .voxel_features
                    .iter_rows()
                    .map(|row| self.spec.build(&mut g, &params, row, None))
                    .collect::<Result<_, _>>()?;
                head.build(&mut g, &voxels, c)?;
            }
        }
        Ok(g)
    }
}

impl<S: Scalar> LogDensity<S> for NetworkTarget<S> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn log_density_and_grad(&self, x: &[S]) -> Result<(S, Vec<S>), ModelError> {
        posterior_from_parts(self, x)
    }

    fn as_model(&self) -> Option<&dyn BayesianModel<S>> {
        Some(self)
    }
}

impl<S: Scalar> BayesianModel<S> for NetworkTarget<S> {
    fn n_data(&self) -> usize {
        match &self.observations {
            Observations::Rows(d) => d.len(),
            Observations::Catalogue(c) => c.len(),
        }
    }

    fn log_likelihood_and_grad(&self, x: &[S], rows: Option<&[usize]>) -> Result<(S, Vec<S>), ModelError> {
        let mut g = self.likelihood_graph(rows)?;
        Ok(g.value_and_gradient(x)?)
    }

    fn log_prior_and_grad(&self, x: &[S]) -> (S, Vec<S>) {
        self.prior.log_prior_and_grad(x)
    }
}

/// Gaussian-mean model: `y_n ~ N(λ, noise_var)` with a prior on the scalar `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMeanModel<S> {
    pub data: Vec<S>,
    pub noise_var: S,
    pub prior: PriorSpec,
}

impl<S: Scalar> LogDensity<S> for GaussianMeanModel<S> {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_and_grad(&self, x: &[S]) -> Result<(S, Vec<S>), ModelError> {
        posterior_from_parts(self, x)
    }

    fn as_model(&self) -> Option<&dyn BayesianModel<S>> {
        Some(self)
    }
}

impl<S: Scalar> BayesianModel<S> for GaussianMeanModel<S> {
    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn log_likelihood_and_grad(&self, x: &[S], rows: Option<&[usize]>) -> Result<(S, Vec<S>), ModelError> {
        let lambda = x[0];
        let c = S::lit(-0.5) * (S::TAU() * self.noise_var).ln();
        let mut value = S::zero();
        let mut grad = S::zero();
        let mut add = |y: S| {
            let r = y - lambda;
            value = value + c - r * r / (S::lit(2.0) * self.noise_var);
            grad = grad + r / self.noise_var;
        };
        match rows {
            Some(idx) => idx.iter().for_each(|&i| add(self.data[i])),
            None => self.data.iter().for_each(|&y| add(y)),
        }
        Ok((value, vec![grad]))
    }

    fn log_prior_and_grad(&self, x: &[S]) -> (S, Vec<S>) {
        self.prior.log_prior_and_grad(x)
    }
}

/// Multivariate normal `N(μ, Σ)`.
#[derive(Clone, Debug)]
pub struct GaussianTarget<S> {
    mean: Vec<S>,
    cov: Matrix<S>,
    chol: Cholesky<S>,
    precision: Matrix<S>,
}

impl<S: Scalar> GaussianTarget<S> {
    pub fn new(mean: Vec<S>, cov: Matrix<S>) -> Result<Self, ModelError> {
        if cov.rows() != mean.len() || !cov.is_square() {
            return Err(ModelError::Config("covariance does not match mean".into()));
        }
        let chol = cov.cholesky()?;
        let precision = chol.inverse();
        Ok(Self {
            mean,
            cov,
            chol,
            precision,
        })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(vec![S::zero(); d], Matrix::identity(d)).expect("identity is SPD")
    }

    pub fn diagonal(mean: Vec<S>, variances: &[S]) -> Result<Self, ModelError> {
        Self::new(mean, Matrix::from_diag(variances))
    }

    pub fn mean(&self) -> &[S] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix<S> {
        &self.cov
    }

    pub fn precision(&self) -> &Matrix<S> {
        &self.precision
    }
}

/// Closed-form targets used for testing and benchmarking the samplers.
#[derive(Clone, Debug)]
pub enum AnalyticTarget<S> {
    Gaussian(GaussianTarget<S>),
    /// `x₀ ~ N(0, a²)`, `x₁ | x₀ ~ N(b (x₀² − a²), 1)`.
    Banana {
        a: S,
        b: S,
    },
    /// `v ~ N(0, 3²)`, `x_i | v ~ N(0, e^v)` for the remaining `dim − 1` coordinates.
    Funnel {
        dim: usize,
    },
}

impl<S: Scalar> LogDensity<S> for AnalyticTarget<S> {
    fn dim(&self) -> usize {
        match self {
            AnalyticTarget::Gaussian(g) => g.mean.len(),
            AnalyticTarget::Banana { .. } => 2,
            AnalyticTarget::Funnel { dim } => *dim,
        }
    }

    fn log_density_and_grad(&self, x: &[S]) -> Result<(S, Vec<S>), ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::Config(format!(
                "point has dimension {}, target {}",
                x.len(),
                self.dim()
            )));
        }
        let half = S::lit(0.5);
        let half_ln_2pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        match self {
            AnalyticTarget::Gaussian(g) => {
                let r: Vec<S> = x.iter().zip(&g.mean).map(|(&a, &m)| a - m).collect();
                let pr = g.precision.matvec(&r);
                let quad = crate::linalg::dot(&r, &pr);
                let d = S::from_usize(r.len()).unwrap();
                let value = -half * quad - half * g.chol.log_det() - d * half_ln_2pi;
                Ok((value, pr.into_iter().map(|v| -v).collect()))
            }
            AnalyticTarget::Banana { a, b } => {
                let (x0, x1) = (x[0], x[1]);
                let a2 = *a * *a;
                let m = *b * (x0 * x0 - a2);
                let r = x1 - m;
                let value = -x0 * x0 / (S::lit(2.0) * a2) - a.ln() - half * r * r - S::lit(2.0) * half_ln_2pi;
                let g0 = -x0 / a2 + r * S::lit(2.0) * *b * x0;
                Ok((value, vec![g0, -r]))
            }
            AnalyticTarget::Funnel { .. } => {
                let v = x[0];
                let nine = S::lit(9.0);
                let mut value = -v * v / (S::lit(2.0) * nine) - S::lit(3.0).ln() - half_ln_2pi;
                let mut gv = -v / nine;
                let inv = (-v).exp();
                let mut grad = vec![S::zero(); x.len()];
                for (i, &xi) in x.iter().enumerate().skip(1) {
                    value = value - half * xi * xi * inv - half * v - half_ln_2pi;
                    gv = gv + half * xi * xi * inv - half;
                    grad[i] = -xi * inv;
                }
                grad[0] = gv;
                Ok((value, grad))
            }
        }
    }

    fn expected_fisher(&self, x: &[S]) -> Option<Matrix<S>> {
        match self {
            AnalyticTarget::Gaussian(g) => Some(g.precision.clone()),
            AnalyticTarget::Funnel { dim } => {
                let mut d = vec![(-x[0]).exp(); *dim];
                d[0] = S::one() / S::lit(9.0) + S::lit(0.5) * S::from_usize(dim - 1).unwrap();
                Some(Matrix::from_diag(&d))
            }
            AnalyticTarget::Banana { .. } => None,
        }
    }
}

/// Wraps a closure returning `(log ϱ, ∇ log ϱ)`.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<S, F> LogDensity<S> for FnDensity<F>
where
    S: Scalar,
    F: Fn(&[S]) -> Result<(S, Vec<S>), ModelError>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, x: &[S]) -> Result<(S, Vec<S>), ModelError> {
        (self.f)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check_fn;
    use crate::models::network::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn standard_normal_at_origin() {
        let t = AnalyticTarget::Gaussian(GaussianTarget::<f64>::standard(1));
        let (v, g) = unnorm_log_posterior(&t, &[0.0]).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn flat_banana_is_independent_gaussian() {
        let t = AnalyticTarget::Banana { a: 1.0, b: 0.0 };
        let (_, g) = unnorm_log_posterior(&t, &[0.7, -1.3]).unwrap();
        assert_eq!(g, vec![-0.7, 1.3]);
    }

    #[test]
    fn analytic_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 0.5]]);
        let targets = vec![
            AnalyticTarget::Gaussian(GaussianTarget::new(vec![1.0, -1.0], cov).unwrap()),
            AnalyticTarget::Banana { a: 1.5, b: 0.7 },
            AnalyticTarget::Funnel { dim: 4 },
        ];
        for t in &targets {
            for _ in 0..5 {
                let x: Vec<f64> = (0..t.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
                let err = finite_difference_check_fn(|p| t.log_density_and_grad(p), &x, 1e-5).unwrap();
                assert!(err < 1e-6, "err {err}");
            }
        }
    }

    fn regression_target(rows: usize) -> NetworkTarget<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..rows).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0].sin()]).collect();
        let spec = NetworkSpec::new(vec![1, 4, 1], vec![Activation::Tanh], LikelihoodHead::UnitGaussian).unwrap();
        let data = Dataset::new(Matrix::from_rows(&x), Matrix::from_rows(&y)).unwrap();
        NetworkTarget::new(spec, PriorSpec::isotropic(1.0), Observations::Rows(data)).unwrap()
    }

    #[test]
    fn network_posterior_gradient_matches_differences() {
        let t = regression_target(12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..t.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = finite_difference_check_fn(|p| unnorm_log_posterior(&t, p), &w, 1e-5).unwrap();
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn row_order_does_not_change_posterior() {
        let t = regression_target(9);
        let Observations::Rows(d) = &t.observations else {
            unreachable!()
        };
        let order: Vec<usize> = (0..9).rev().collect();
        let shuffled =
            NetworkTarget::new(t.spec.clone(), t.prior.clone(), Observations::Rows(d.permuted(&order))).unwrap();
        let w = vec![0.1; t.dim()];
        let (a, ga) = t.log_density_and_grad(&w).unwrap();
        let (b, gb) = shuffled.log_density_and_grad(&w).unwrap();
        assert!((a - b).abs() < 1e-12);
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_is_additive_over_rows() {
        let t = regression_target(6);
        let w = vec![0.2; t.dim()];
        let (all, _) = t.log_likelihood_and_grad(&w, None).unwrap();
        let parts: f64 = (0..6)
            .map(|i| t.log_likelihood_and_grad(&w, Some(&[i])).unwrap().0)
            .sum();
        assert!((all - parts).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let t = AnalyticTarget::Gaussian(GaussianTarget::<f64>::standard(2));
        assert!(unnorm_log_posterior(&t, &[0.0]).is_err());
    }
}
