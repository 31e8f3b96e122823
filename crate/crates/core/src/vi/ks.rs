//! Two-sample Kolmogorov–Smirnov test.

/// `sup_x |F_a(x) − F_b(x)|` between the empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value `√(−ln(α/2)/2) · √((n+m)/(nm))`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical: f64,
}

impl KsOutcome {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical
    }
}

pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> KsOutcome {
    KsOutcome {
        statistic: ks_statistic(a, b),
        critical: ks_critical_value(alpha, a.len(), b.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn disjoint_samples() {
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
    }

    #[test]
    fn identical_samples() {
        assert_eq!(ks_statistic(&[0.5, 0.1, 0.9], &[0.9, 0.5, 0.1]), 0.0);
    }

    #[test]
    fn critical_value_at_one_percent() {
        // c(0.01) = 1.6276
        assert!((ks_critical_value(0.01, 100, 100) - 1.6276 * 0.02f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn same_law_passes_shifted_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &b, 0.01).passes());
        assert!(!ks_two_sample(&a, &c, 0.01).passes());
    }
}
