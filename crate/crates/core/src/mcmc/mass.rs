use rand::Rng;

use crate::error::SamplerError;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::Scalar;

/// Momentum covariance `M`; kinetic energy is `½ νᵀ M⁻¹ ν`.
#[derive(Clone, Debug)]
pub enum MassMatrix<S> {
    Identity(usize),
    Diagonal(Vec<S>),
    Dense { m: Matrix<S>, chol: Cholesky<S> },
}

impl<S: Scalar> MassMatrix<S> {
    pub fn identity(d: usize) -> Self {
        MassMatrix::Identity(d)
    }

    pub fn diagonal(d: Vec<S>) -> Result<Self, SamplerError> {
        if let Some(i) = d.iter().position(|&x| !(x > S::zero()) || !x.is_finite()) {
            return Err(SamplerError::Config(format!("mass entry {i} is not positive")));
        }
        Ok(MassMatrix::Diagonal(d))
    }

    pub fn dense(m: Matrix<S>) -> Result<Self, SamplerError> {
        if !m.is_square() || !m.is_symmetric(S::lit(1e-12)) {
            return Err(SamplerError::Config(
                "dense mass matrix must be square and symmetric".into(),
            ));
        }
        let chol = m.cholesky()?;
        Ok(MassMatrix::Dense { m, chol })
    }

    /// `M_ii = 1 / var_i`, so that `M⁻¹` matches the target's scale.
    pub fn from_variances(var: &[S]) -> Result<Self, SamplerError> {
        Self::diagonal(var.iter().map(|&v| S::one() / v).collect())
    }

    pub fn dim(&self) -> usize {
        match self {
            MassMatrix::Identity(d) => *d,
            MassMatrix::Diagonal(v) => v.len(),
            MassMatrix::Dense { m, .. } => m.rows(),
        }
    }

    /// `M⁻¹ ν`.
    pub fn inv_mul(&self, nu: &[S]) -> Vec<S> {
        match self {
            MassMatrix::Identity(_) => nu.to_vec(),
            MassMatrix::Diagonal(d) => nu.iter().zip(d).map(|(&n, &m)| n / m).collect(),
            MassMatrix::Dense { chol, .. } => chol.solve(nu),
        }
    }

    pub fn kinetic(&self, nu: &[S]) -> S {
        S::lit(0.5) * dot(nu, &self.inv_mul(nu))
    }

    /// `ν ~ N(0, M)`.
    pub fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let z: Vec<S> = (0..self.dim()).map(|_| S::std_normal(rng)).collect();
        match self {
            MassMatrix::Identity(_) => z,
            MassMatrix::Diagonal(d) => z.iter().zip(d).map(|(&z, &m)| z * m.sqrt()).collect(),
            MassMatrix::Dense { chol, .. } => chol.mul_l(&z),
        }
    }

    pub fn to_matrix(&self) -> Matrix<S> {
        match self {
            MassMatrix::Identity(d) => Matrix::identity(*d),
            MassMatrix::Diagonal(v) => Matrix::from_diag(v),
            MassMatrix::Dense { m, .. } => m.clone(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MassMatrix::Identity(_) => "identity",
            MassMatrix::Diagonal(_) => "diagonal",
            MassMatrix::Dense { .. } => "dense",
        }
    }
}
