//! Monte Carlo posterior predictive `p(y|x) ≈ (1/K) Σ_k ℓ(y | x, w_k)`.

use rand::Rng;

use crate::error::ModelError;
use crate::linalg::Matrix;
use crate::models::network::NetworkSpec;
use crate::scalar::Scalar;

/// Predictive draws for each input plus the mixture mean of `E[y | x, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSamples<S> {
    /// One matrix per input with a row per draw.
    pub draws: Vec<Matrix<S>>,
    /// `n_inputs × width` mixture mean.
    pub mean: Matrix<S>,
}

impl<S: Scalar> PredictiveSamples<S> {
    pub fn n_inputs(&self) -> usize {
        self.draws.len()
    }

    /// Per-input, per-column sample standard deviation of the draws.
    pub fn spread(&self) -> Matrix<S> {
        let width = self.mean.cols();
        let mut out = Matrix::zeros(self.draws.len(), width);
        for (i, d) in self.draws.iter().enumerate() {
            let n = d.rows();
            if n < 2 {
                continue;
            }
            let nf = S::from_usize(n).unwrap();
            for j in 0..width.min(d.cols()) {
                let col = d.column(j);
                let m = col.iter().copied().sum::<S>() / nf;
                let v = col.iter().map(|&x| (x - m) * (x - m)).sum::<S>() / (nf - S::one());
                out.row_mut(i)[j] = v.sqrt();
            }
        }
        out
    }
}

/// Mixes the likelihood head over `param_draws`, taking `n_y_draws` samples of
/// `y` per parameter draw. A single draw gives the plug-in predictive.
pub fn posterior_predictive<S: Scalar, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    param_draws: &[Vec<S>],
    x: &Matrix<S>,
    n_y_draws: usize,
    rng: &mut R,
) -> Result<PredictiveSamples<S>, ModelError> {
    if param_draws.is_empty() {
        return Err(ModelError::Precondition(
            "posterior predictive needs at least one parameter draw".into(),
        ));
    }
    let head = &spec.head;
    let width = head.expected(&vec![S::zero(); spec.output_width()]).len();
    let k = S::from_usize(param_draws.len()).unwrap();
    let mut mean = Matrix::zeros(x.rows(), width);
    let mut draws: Vec<Vec<Vec<S>>> = vec![Vec::with_capacity(param_draws.len() * n_y_draws); x.rows()];
    for w in param_draws {
        for (i, row) in x.iter_rows().enumerate() {
            let r = spec.forward_row(w, row, None)?;
            for (m, e) in mean.row_mut(i).iter_mut().zip(head.expected(&r)) {
                *m = *m + e / k;
            }
            for _ in 0..n_y_draws {
                draws[i].push(head.sample(&r, rng));
            }
        }
    }
    let draws = draws
        .into_iter()
        .map(|rows| {
            if rows.is_empty() || rows[0].is_empty() {
                Matrix::zeros(rows.len(), 0)
            } else {
                Matrix::from_rows(&rows)
            }
        })
        .collect();
    Ok(PredictiveSamples { draws, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::heads::LikelihoodHead;
    use crate::scalar::logit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // 1-1 identity network: r = w0·x + w1
    fn linear(head: LikelihoodHead) -> NetworkSpec {
        NetworkSpec::new(vec![1, 1], vec![], head).unwrap()
    }

    #[test]
    fn empty_draws_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Matrix::from_rows(&[vec![0.0]]);
        let r = posterior_predictive::<f64, _>(&linear(LikelihoodHead::UnitGaussian), &[], &x, 1, &mut rng);
        assert!(matches!(r, Err(ModelError::Precondition(_))));
    }

    #[test]
    fn symmetric_draws_have_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Matrix::from_rows(&[vec![0.0]]);
        let draws = vec![vec![0.0, -1.0], vec![0.0, 1.0]];
        let p = posterior_predictive(&linear(LikelihoodHead::UnitGaussian), &draws, &x, 3, &mut rng).unwrap();
        assert_eq!(p.mean.row(0), &[0.0]);
        assert_eq!(p.draws[0].rows(), 6);
    }

    #[test]
    fn binomial_mean_rate_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Matrix::from_rows(&[vec![0.0]]);
        let draws: Vec<Vec<f64>> = vec![vec![0.0, logit(0.2)], vec![0.0, logit(0.4)]];
        let p = posterior_predictive(&linear(LikelihoodHead::Binomial { trials: 5 }), &draws, &x, 1, &mut rng).unwrap();
        assert!((p.mean.row(0)[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_draw_sample_mean_approaches_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_rows(&[vec![2.0]]);
        let draws = vec![vec![0.5, 0.25]];
        let p = posterior_predictive(&linear(LikelihoodHead::UnitGaussian), &draws, &x, 40_000, &mut rng).unwrap();
        let col: Vec<f64> = p.draws[0].column(0);
        let m = col.iter().sum::<f64>() / col.len() as f64;
        assert!((m - 1.25).abs() < 0.02);
        let s: f64 = p.spread().row(0)[0];
        assert!((s - 1.0).abs() < 0.02);
    }
}
