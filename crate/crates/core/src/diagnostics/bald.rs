use crate::error::DiagnosticsError;
use crate::linalg::Matrix;
use crate::models::predictive::PredictiveSamples;

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `I = H(mean_t p_t) − mean_t H(p_t)` for a `T × n_classes` matrix of
/// class-probability draws.
pub fn bald_mutual_information(samples: &Matrix<f64>) -> Result<f64, DiagnosticsError> {
    let t = samples.rows();
    if t < 2 {
        return Err(DiagnosticsError::Precondition(format!(
            "need at least 2 draws, got {t}"
        )));
    }
    for (i, row) in samples.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
            return Err(DiagnosticsError::Precondition(format!(
                "row {i} is not a probability vector"
            )));
        }
    }
    let c = samples.cols();
    let mut mean = vec![0.0; c];
    for row in samples.iter_rows() {
        mean.iter_mut().zip(row).for_each(|(m, &p)| *m += p);
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let expected: f64 = samples.iter_rows().map(entropy).sum::<f64>() / t as f64;
    Ok((entropy(&mean) - expected).max(0.0))
}

/// BALD score per input from MC class-probability draws. A single column is
/// read as the success probability of a binary outcome.
pub fn bald_scores(preds: &PredictiveSamples<f64>) -> Result<Vec<f64>, DiagnosticsError> {
    preds
        .draws
        .iter()
        .map(|d| {
            if d.cols() == 1 {
                let rows: Vec<Vec<f64>> = d.as_slice().iter().map(|&p| vec![p, 1.0 - p]).collect();
                bald_mutual_information(&Matrix::from_rows(&rows))
            } else {
                bald_mutual_information(d)
            }
        })
        .collect()
}

/// Indices sorted by descending score, ties broken by index, truncated to
/// `top_k`.
pub fn rank_by_score(scores: &[f64], top_k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    idx.truncate(top_k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Dirichlet, Distribution};

    #[test]
    fn identical_rows_zero() {
        let m = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.2, 0.8], vec![0.2, 0.8]]);
        assert_eq!(bald_mutual_information(&m).unwrap(), 0.0);
    }

    #[test]
    fn opposite_certainties_log_two() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(bald_mutual_information(&m).unwrap(), 2f64.ln());
    }

    #[test]
    fn dirichlet_rows_match_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dirichlet::new([1.0, 1.0]).unwrap();
        let rows: Vec<Vec<f64>> = (0..50).map(|_| d.sample(&mut rng).to_vec()).collect();
        let m = Matrix::from_rows(&rows);
        let mi = bald_mutual_information(&m).unwrap();
        let p1 = rows.iter().map(|r| r[0]).sum::<f64>() / 50.0;
        let h = |p: f64| {
            if p <= 0.0 || p >= 1.0 {
                0.0
            } else {
                -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
            }
        };
        let direct = h(p1) - rows.iter().map(|r| h(r[0])).sum::<f64>() / 50.0;
        assert!((mi - direct).abs() < 1e-12);
        assert!(mi <= 2f64.ln());
    }

    #[test]
    fn non_simplex_rejected() {
        let m = Matrix::from_rows(&[vec![0.5, 0.6], vec![0.5, 0.5]]);
        assert!(bald_mutual_information(&m).is_err());
    }

    #[test]
    fn ranking_is_stable() {
        assert_eq!(rank_by_score(&[0.0, 0.0, 0.0], 3), vec![0, 1, 2]);
        assert_eq!(rank_by_score(&[0.0, 0.4, 0.0], 2), vec![1, 0]);
        assert!(rank_by_score(&[1.0], 0).is_empty());
    }
}
