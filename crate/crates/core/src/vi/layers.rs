//! Stochastic dense layers: per-weight sampling, local reparameterisation,
//! Flipout and multiplicative dropout noise.
//!
//! Inputs are `n × in` matrices with one example per row; weights are
//! `out × in`; outputs are `n × out`.

use rand::Rng;

use crate::error::ViError;
use crate::linalg::Matrix;
use crate::scalar::{softplus, softplus_inv, Scalar};

fn check_shapes<S: Scalar>(mu: &Matrix<S>, sigma: &Matrix<S>, inputs: &Matrix<S>) {
    assert_eq!(
        (mu.rows(), mu.cols()),
        (sigma.rows(), sigma.cols()),
        "mean and scale shapes differ"
    );
    assert_eq!(inputs.cols(), mu.cols(), "input width does not match the layer");
}

/// Samples `W = μ + σ ∘ E` and returns `inputs · Wᵀ`. With `shared` one draw
/// serves the whole minibatch; otherwise every example gets its own draw.
pub fn weight_sample_forward<S: Scalar, R: Rng + ?Sized>(
    mu: &Matrix<S>,
    sigma: &Matrix<S>,
    inputs: &Matrix<S>,
    shared: bool,
    rng: &mut R,
) -> Matrix<S> {
    check_shapes(mu, sigma, inputs);
    let draw = |rng: &mut R| {
        let mut w = mu.clone();
        for (wi, &s) in w.as_mut_slice().iter_mut().zip(sigma.as_slice()) {
            *wi = *wi + s * S::std_normal(rng);
        }
        w
    };
    let mut out = Matrix::zeros(inputs.rows(), mu.rows());
    let mut w = draw(rng);
    for (n, x) in inputs.iter_rows().enumerate() {
        if !shared && n > 0 {
            w = draw(rng);
        }
        out.row_mut(n).copy_from_slice(&w.matvec(x));
    }
    out
}

/// `o_{nj} = Σ_i μ_{ji} x_{ni} + ε_{nj} √(Σ_i σ_{ji}² x_{ni}²)`.
pub fn local_reparam_forward<S: Scalar, R: Rng + ?Sized>(
    mu: &Matrix<S>,
    sigma: &Matrix<S>,
    inputs: &Matrix<S>,
    rng: &mut R,
) -> Matrix<S> {
    check_shapes(mu, sigma, inputs);
    let mut out = Matrix::zeros(inputs.rows(), mu.rows());
    for (n, x) in inputs.iter_rows().enumerate() {
        let mean = mu.matvec(x);
        for j in 0..mu.rows() {
            let var: S = sigma.row(j).iter().zip(x).map(|(&s, &a)| s * s * a * a).sum();
            out[(n, j)] = mean[j] + S::std_normal(rng) * var.sqrt();
        }
    }
    out
}

/// Dense layer with mean weights and a softplus-scaled perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipoutLayer<S> {
    pub mu: Matrix<S>,
    pub delta_raw: Matrix<S>,
}

/// One base perturbation and per-example sign vectors for a minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipoutNoise<S> {
    pub delta: Matrix<S>,
    /// `n × out` output signs.
    pub j: Matrix<S>,
    /// `n × in` input signs.
    pub k: Matrix<S>,
}

fn sign<S: Scalar, R: Rng + ?Sized>(rng: &mut R) -> S {
    if rng.random::<bool>() {
        S::one()
    } else {
        -S::one()
    }
}

impl<S: Scalar> FlipoutLayer<S> {
    pub fn new(mu: Matrix<S>, sigma: &Matrix<S>) -> Result<Self, ViError> {
        if (mu.rows(), mu.cols()) != (sigma.rows(), sigma.cols()) {
            return Err(ViError::Config("mean and scale shapes differ".into()));
        }
        if sigma.as_slice().iter().any(|&s| !(s > S::zero())) {
            return Err(ViError::Config("perturbation scales must be positive".into()));
        }
        let raw = sigma.as_slice().iter().map(|&s| softplus_inv(s)).collect();
        Ok(Self {
            delta_raw: Matrix::from_vec(mu.rows(), mu.cols(), raw),
            mu,
        })
    }

    pub fn sigma(&self) -> Matrix<S> {
        let v = self.delta_raw.as_slice().iter().map(|&r| softplus(r)).collect();
        Matrix::from_vec(self.mu.rows(), self.mu.cols(), v)
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> FlipoutNoise<S> {
        let sigma = self.sigma();
        let d = sigma.as_slice().iter().map(|&s| s * S::std_normal(rng)).collect();
        let delta = Matrix::from_vec(self.mu.rows(), self.mu.cols(), d);
        let j = Matrix::from_vec(n, self.mu.rows(), (0..n * self.mu.rows()).map(|_| sign(rng)).collect());
        let k = Matrix::from_vec(n, self.mu.cols(), (0..n * self.mu.cols()).map(|_| sign(rng)).collect());
        FlipoutNoise { delta, j, k }
    }

    /// `out_n = μ x_n + ((x_n ∘ k_n) Δwᵀ) ∘ j_n`.
    pub fn forward_with(&self, noise: &FlipoutNoise<S>, inputs: &Matrix<S>) -> Matrix<S> {
        assert_eq!(inputs.cols(), self.mu.cols(), "input width does not match the layer");
        assert_eq!(
            inputs.rows(),
            noise.j.rows(),
            "noise drawn for a different minibatch size"
        );
        let mut out = Matrix::zeros(inputs.rows(), self.mu.rows());
        for (n, x) in inputs.iter_rows().enumerate() {
            let xk: Vec<S> = x.iter().zip(noise.k.row(n)).map(|(&a, &s)| a * s).collect();
            let mean = self.mu.matvec(x);
            let pert = noise.delta.matvec(&xk);
            for o in 0..self.mu.rows() {
                out[(n, o)] = mean[o] + pert[o] * noise.j[(n, o)];
            }
        }
        out
    }
}

pub fn flipout_forward<S: Scalar, R: Rng + ?Sized>(
    layer: &FlipoutLayer<S>,
    inputs: &Matrix<S>,
    rng: &mut R,
) -> Matrix<S> {
    let noise = layer.draw_noise(inputs.rows(), rng);
    layer.forward_with(&noise, inputs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutKind {
    /// Multiplier `z / m` with `z ~ Bernoulli(m)`, `m` the keep rate.
    Bernoulli,
    /// Multiplier `ε ~ N(1, m)`, `m` the variance.
    Gaussian,
}

impl DropoutKind {
    pub fn name(self) -> &'static str {
        match self {
            DropoutKind::Bernoulli => "bernoulli",
            DropoutKind::Gaussian => "gaussian",
        }
    }
}

/// Multiplicative noise on hidden-layer outputs, one rate per hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutSpec {
    pub kind: DropoutKind,
    pub rates: Vec<f64>,
    pub n_mc: usize,
}

impl DropoutSpec {
    pub fn validate(&self, n_hidden: usize) -> Result<(), ViError> {
        if self.rates.len() != n_hidden {
            return Err(ViError::Config(format!(
                "{} dropout rates for {n_hidden} hidden layers",
                self.rates.len()
            )));
        }
        for &m in &self.rates {
            let ok = match self.kind {
                DropoutKind::Bernoulli => m > 0.0 && m <= 1.0,
                DropoutKind::Gaussian => m >= 0.0 && m.is_finite(),
            };
            if !ok {
                return Err(ViError::Config(format!(
                    "invalid {} dropout rate {m}",
                    self.kind.name()
                )));
            }
        }
        if self.n_mc == 0 {
            return Err(ViError::Config("n_mc must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn dropout_multiplier<S: Scalar, R: Rng + ?Sized>(kind: DropoutKind, rate: f64, rng: &mut R) -> S {
    match kind {
        DropoutKind::Bernoulli if rate >= 1.0 => S::one(),
        DropoutKind::Bernoulli => {
            if rng.random::<f64>() < rate {
                S::lit(1.0 / rate)
            } else {
                S::zero()
            }
        }
        DropoutKind::Gaussian if rate == 0.0 => S::one(),
        DropoutKind::Gaussian => S::one() + S::lit(rate.sqrt()) * S::std_normal(rng),
    }
}

pub fn dropout_forward<S: Scalar, R: Rng + ?Sized>(
    kind: DropoutKind,
    rate: f64,
    activations: &[S],
    rng: &mut R,
) -> Vec<S> {
    activations
        .iter()
        .map(|&a| a * dropout_multiplier(kind, rate, rng))
        .collect()
}

/// How weight noise is shared across a minibatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMethod {
    /// One weight draw for the whole minibatch.
    SharedNoise,
    LocalReparam,
    Flipout,
}

impl NoiseMethod {
    pub fn name(self) -> &'static str {
        match self {
            NoiseMethod::SharedNoise => "shared-noise",
            NoiseMethod::LocalReparam => "local-reparam",
            NoiseMethod::Flipout => "flipout",
        }
    }
}

/// Fixed single-output linear regression used to compare gradient noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyLayerProblem {
    pub inputs: Matrix<f64>,
    pub targets: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ToyLayerProblem {
    /// Inputs uniform on `[−√3, √3]`, unit-noise targets from fixed weights,
    /// and a posterior-like `(μ, σ)` at the generating weights.
    pub fn synthetic<R: Rng + ?Sized>(n: usize, d: usize, sigma: f64, rng: &mut R) -> Self {
        let w: Vec<f64> = (0..d).map(|i| 1.0 - 0.5 * i as f64).collect();
        let r = 3f64.sqrt();
        let inputs = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-r..r)).collect());
        let targets = inputs
            .iter_rows()
            .map(|x| crate::linalg::dot(&w, x) + f64::std_normal(rng))
            .collect();
        Self {
            inputs,
            targets,
            mu: w,
            sigma: vec![sigma; d],
        }
    }

    /// `∂/∂μ` of the minibatch mean of `−(y − o)²/2` under one noise draw.
    pub fn mean_gradient<R: Rng + ?Sized>(&self, method: NoiseMethod, batch: &[usize], rng: &mut R) -> Vec<f64> {
        let d = self.mu.len();
        let x = Matrix::from_rows(&batch.iter().map(|&i| self.inputs.row(i).to_vec()).collect::<Vec<_>>());
        let mu = Matrix::from_vec(1, d, self.mu.clone());
        let sigma = Matrix::from_vec(1, d, self.sigma.clone());
        let out = match method {
            NoiseMethod::SharedNoise => weight_sample_forward(&mu, &sigma, &x, true, rng),
            NoiseMethod::LocalReparam => local_reparam_forward(&mu, &sigma, &x, rng),
            NoiseMethod::Flipout => {
                let layer = FlipoutLayer::new(mu, &sigma).expect("positive scales");
                flipout_forward(&layer, &x, rng)
            }
        };
        let mut g = vec![0.0; d];
        for (r, &i) in batch.iter().enumerate() {
            let resid = self.targets[i] - out[(r, 0)];
            for (gc, &xc) in g.iter_mut().zip(x.row(r)) {
                *gc += resid * xc / batch.len() as f64;
            }
        }
        g
    }
}

/// Mean over components of the empirical variance of the minibatch gradient
/// across `reps` independent noise draws on a fixed minibatch.
pub fn gradient_variance_probe<R: Rng + ?Sized>(
    method: NoiseMethod,
    problem: &ToyLayerProblem,
    batch: &[usize],
    reps: usize,
    rng: &mut R,
) -> f64 {
    assert!(reps >= 2, "need at least two repetitions");
    let grads: Vec<Vec<f64>> = (0..reps).map(|_| problem.mean_gradient(method, batch, rng)).collect();
    let d = problem.mu.len();
    (0..d)
        .map(|c| {
            let m = grads.iter().map(|g| g[c]).sum::<f64>() / reps as f64;
            grads.iter().map(|g| (g[c] - m).powi(2)).sum::<f64>() / (reps - 1) as f64
        })
        .sum::<f64>()
        / d as f64
}
