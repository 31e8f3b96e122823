use super::Graph;
use crate::error::AdError;
use crate::scalar::Scalar;

/// Max over coordinates of `|central difference − reverse mode| / (|reverse mode| + 1e-12)`.
pub fn finite_difference_check<S: Scalar>(graph: &mut Graph<S>, params: &[S], step: S) -> Result<S, AdError> {
    let (_, grad) = graph.value_and_gradient(params)?;
    let mut probe = params.to_vec();
    let mut worst = S::zero();
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = graph.forward(&probe)?;
        probe[i] = params[i] - step;
        let down = graph.forward(&probe)?;
        probe[i] = params[i];
        let fd = (up - down) / (S::lit(2.0) * step);
        worst = worst.max(relative_error(fd, grad[i]));
    }
    // Leave the caches bound to the caller's parameters.
    graph.forward(params)?;
    Ok(worst)
}

/// Same check for any `value_and_gradient` closure.
pub fn finite_difference_check_fn<S, F, E>(f: F, params: &[S], step: S) -> Result<S, E>
where
    S: Scalar,
    F: Fn(&[S]) -> Result<(S, Vec<S>), E>,
{
    let (_, grad) = f(params)?;
    let mut probe = params.to_vec();
    let mut worst = S::zero();
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = f(&probe)?.0;
        probe[i] = params[i] - step;
        let down = f(&probe)?.0;
        probe[i] = params[i];
        let fd = (up - down) / (S::lit(2.0) * step);
        worst = worst.max(relative_error(fd, grad[i]));
    }
    Ok(worst)
}

fn relative_error<S: Scalar>(fd: S, exact: S) -> S {
    (fd - exact).abs() / (exact.abs() + S::lit(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let mut g = Graph::new(2);
        let p = g.params();
        let a = g.square(p[0]);
        let b = g.mul(p[0], p[1]);
        let c = g.scale(b, 3.0);
        g.add(a, c);
        let err = finite_difference_check(&mut g, &[0.7, -1.1], 1e-5).unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn constant_graph_has_zero_error() {
        let mut g = Graph::new(3);
        g.constant(4.2);
        assert_eq!(finite_difference_check(&mut g, &[1.0, 2.0, 3.0], 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn tanh_mlp_loss_matches() {
        // 2-3-1 tanh network, squared loss on two points.
        let n_in = 2;
        let n_hidden = 3;
        let n_params = n_hidden * n_in + n_hidden + n_hidden + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs = [[0.3, -0.8], [1.2, 0.4]];
        let ys = [0.5, -0.25];

        let mut g = Graph::new(n_params);
        let w = g.params();
        let mut losses = Vec::new();
        for (x, &y) in xs.iter().zip(&ys) {
            let xv: Vec<_> = x.iter().map(|&xi| g.constant(xi)).collect();
            let mut hidden = Vec::new();
            for h in 0..n_hidden {
                let row = &w[h * n_in..(h + 1) * n_in];
                let pre = g.dot(row, &xv);
                let pre = g.add(pre, w[n_hidden * n_in + h]);
                hidden.push(g.tanh(pre));
            }
            let off = n_hidden * n_in + n_hidden;
            let out = g.dot(&w[off..off + n_hidden], &hidden);
            let out = g.add(out, w[off + n_hidden]);
            let target = g.constant(y);
            let r = g.sub(out, target);
            losses.push(g.square(r));
        }
        g.sum(&losses);
        let err = finite_difference_check(&mut g, &params, 1e-5).unwrap();
        assert!(err < 1e-5, "err = {err}");
    }
}
