use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("eigen-decomposition did not converge")]
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("numeric overflow at node {node}")]
    NumericOverflow { node: usize },
    #[error("parameter vector has length {got}, graph expects {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("parameter entry {index} is not finite")]
    NonFiniteParam { index: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("optimisation diverged at iteration {iteration}")]
    Diverged { iteration: usize, last_finite: Vec<f64> },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("divergent trajectory at leapfrog step {step}")]
    Divergent { step: usize },
    #[error("started at a zero-density point")]
    ZeroDensityStart,
    #[error("unstable configuration: {divergent} of {total} burn-in transitions diverged")]
    Unstable { divergent: usize, total: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ViError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical underflow: all grid mass vanished for factor {factor}")]
    Underflow { factor: usize },
    #[error("ELBO fit diverged at iteration {iteration}")]
    FitDiverged { iteration: usize, trace: Vec<f64> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("Platt scaling did not converge in {iterations} Newton iterations")]
    NoConvergence { iterations: usize, trace: Vec<(f64, f64)> },
}
