use deskbayes::linalg::Matrix;
use deskbayes::mcmc::{hmc_step, leapfrog, qnhmc_step, MassMatrix, PhaseState, QnhmcConfig, QnhmcState};
use deskbayes::models::{AnalyticTarget, GaussianTarget};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quadratic(a: [f64; 3]) -> AnalyticTarget<f64> {
    // covariance from a lower-triangular factor with positive diagonal
    let l = Matrix::from_rows(&[vec![1.0 + a[0].abs(), 0.0], vec![a[1], 0.5 + a[2].abs()]]);
    let cov = l.matmul(&l.transpose());
    AnalyticTarget::Gaussian(GaussianTarget::new(vec![0.0, 0.0], cov).unwrap())
}

fn det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            #[allow(clippy::needless_range_loop)]
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leapfrog_is_time_reversible(
        a in prop::array::uniform3(-1.0f64..1.0),
        lam in prop::array::uniform2(-2.0f64..2.0),
        nu in prop::array::uniform2(-2.0f64..2.0),
        eps in 0.01f64..0.3,
        steps in 1usize..25,
    ) {
        let t = quadratic(a);
        let mass = MassMatrix::diagonal(vec![1.3, 0.7]).unwrap();
        let mut z = PhaseState::new(&t, lam.to_vec()).unwrap();
        z.nu = nu.to_vec();
        let mut fwd = leapfrog(&z, steps, eps, &mass, &t).unwrap();
        fwd.nu.iter_mut().for_each(|v| *v = -*v);
        let mut back = leapfrog(&fwd, steps, eps, &mass, &t).unwrap();
        back.nu.iter_mut().for_each(|v| *v = -*v);
        for (x, y) in back.lambda.iter().chain(&back.nu).zip(z.lambda.iter().chain(&z.nu)) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn leapfrog_preserves_volume(
        a in prop::array::uniform3(-1.0f64..1.0),
        lam in prop::array::uniform2(-2.0f64..2.0),
        nu in prop::array::uniform2(-2.0f64..2.0),
        eps in 0.01f64..0.5,
    ) {
        let t = quadratic(a);
        let mass = MassMatrix::identity(2);
        let h = 1e-5;
        let map = |x: &[f64]| {
            let mut z = PhaseState::new(&t, x[..2].to_vec()).unwrap();
            z.nu = x[2..].to_vec();
            let o = leapfrog(&z, 1, eps, &mass, &t).unwrap();
            [o.lambda[0], o.lambda[1], o.nu[0], o.nu[1]]
        };
        let x0 = [lam[0], lam[1], nu[0], nu[1]];
        let mut jac = vec![vec![0.0; 4]; 4];
        for j in 0..4 {
            let mut up = x0;
            let mut dn = x0;
            up[j] += h;
            dn[j] -= h;
            let (fu, fd) = (map(&up), map(&dn));
            for i in 0..4 {
                jac[i][j] = (fu[i] - fd[i]) / (2.0 * h);
            }
        }
        prop_assert!((det(jac) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn qnhmc_with_identity_matches_hmc(seed in any::<u64>(), eps in 0.05f64..0.4) {
        let t = AnalyticTarget::Banana { a: 1.0, b: 0.3 };
        let mass = MassMatrix::identity(2);
        let mut state = QnhmcState::new(2, &QnhmcConfig::default());
        let z = PhaseState::new(&t, vec![0.2, -0.1]).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(seed);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed);
        let a = hmc_step(&z, eps, 9, &mass, &t, &mut r1).unwrap();
        let b = qnhmc_step(&z, eps, 9, &mass, &mut state, false, &t, &mut r2).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1, b.1);
    }
}

fn mean_abs_energy_error(eps: f64, steps: usize) -> f64 {
    let t = quadratic([0.4, 0.3, -0.2]);
    let mass = MassMatrix::identity(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let n = 4000;
    let mut total = 0.0;
    for _ in 0..n {
        let lam: Vec<f64> = (0..2)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let mut z = PhaseState::new(&t, lam).unwrap();
        z.nu = mass.sample_momentum(&mut rng);
        let out = leapfrog(&z, steps, eps, &mass, &t).unwrap();
        total += (out.hamiltonian(&mass) - z.hamiltonian(&mass)).abs();
    }
    total / n as f64
}

#[test]
fn energy_error_is_second_order() {
    let ratio = mean_abs_energy_error(0.1, 10) / mean_abs_energy_error(0.05, 20);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}
