//! Variational training of network weights: mean-field Bayes by Backprop
//! under shared, local or Flipout noise, and multiplicative dropout.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{ModelError, ViError};
use crate::linalg::Matrix;
use crate::models::data::{Dataset, MinibatchSchedule, MinibatchStream};
use crate::models::network::NetworkSpec;
use crate::models::predictive::PredictiveSamples;
use crate::models::prior::{PriorKind, PriorSpec};
use crate::scalar::Scalar;
use crate::vi::gaussian::{stochastic_ascent, BbbConfig, BbbFit, ElboGradient, MeanFieldGaussian};
use crate::vi::layers::{dropout_multiplier, DropoutSpec, NoiseMethod};

fn prior_sigmas(prior: &PriorSpec, n: usize) -> Result<Vec<f64>, ViError> {
    (0..n)
        .map(|i| match *prior.kind(i) {
            PriorKind::IsotropicGaussian { sigma } => Ok(sigma),
            PriorKind::Uniform { .. } => Err(ViError::Config(
                "network variational training needs a Gaussian prior on every weight".into(),
            )),
        })
        .collect()
}

fn sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Pre-activations sampled per unit from the Gaussian implied by the weight
/// posterior, with biases treated as weights on a constant input.
fn local_reparam_build<S: Scalar, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    g: &mut Graph<S>,
    mu: &[Var],
    sigma_sq: &[Var],
    input: &[S],
    rng: &mut R,
) -> Vec<Var> {
    let mut act: Vec<Var> = input.iter().map(|&x| g.constant(x)).collect();
    for l in 0..spec.n_layers() {
        let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
        let off = spec.layer_offset(l);
        let hidden = l + 1 < spec.n_layers();
        let act_sq: Vec<Var> = act.iter().map(|&a| g.square(a)).collect();
        let mut next = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let w = off + o * n_in;
            let b = off + n_out * n_in + o;
            let m = g.dot(&mu[w..w + n_in], &act);
            let m = g.add(m, mu[b]);
            let v = g.dot(&sigma_sq[w..w + n_in], &act_sq);
            let v = g.add(v, sigma_sq[b]);
            let sd = g.sqrt(v);
            let noise = g.scale(sd, S::std_normal(rng));
            let mut pre = g.add(m, noise);
            if hidden {
                pre = spec.activations[l].apply_node(g, pre);
            }
            next.push(pre);
        }
        act = next;
    }
    act
}

/// Per-weight sign `j_out · k_in` for one example; biases take `j_out`.
fn flipout_signs<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Vec<f64> {
    let mut s = Vec::with_capacity(spec.param_count());
    for l in 0..spec.n_layers() {
        let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
        let j: Vec<f64> = (0..n_out).map(|_| sign(rng)).collect();
        let k: Vec<f64> = (0..n_in).map(|_| sign(rng)).collect();
        for &jo in &j {
            s.extend(k.iter().map(|&ki| jo * ki));
        }
        s.extend(&j);
    }
    s
}

/// Reparameterised minibatch ELBO gradient with respect to `(μ, σ_raw)`:
/// `(N/|b|) Σ_b E_q[log ℓ] − KL(q ‖ prior)`, the KL in closed form.
#[allow(clippy::too_many_arguments)]
pub fn network_elbo_gradient<S: Scalar, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    data: &Dataset<S>,
    prior: &PriorSpec,
    q: &MeanFieldGaussian<S>,
    rows: &[usize],
    method: NoiseMethod,
    n_mc: usize,
    rng: &mut R,
) -> Result<ElboGradient<S>, ViError> {
    let nw = spec.param_count();
    if q.dim() != nw {
        return Err(ViError::Precondition(format!(
            "family has {} weights, network {nw}",
            q.dim()
        )));
    }
    if rows.is_empty() || n_mc == 0 {
        return Err(ViError::Precondition("need at least one row and one MC draw".into()));
    }
    let prior_sd = prior_sigmas(prior, nw)?;
    let mut g = Graph::new(2 * nw);
    let p = g.params();
    let (mu, raw) = p.split_at(nw);
    let sigma: Vec<Var> = raw.iter().map(|&r| g.softplus(r)).collect();
    let mut data_terms = Vec::with_capacity(rows.len() * n_mc);
    for _ in 0..n_mc {
        match method {
            NoiseMethod::SharedNoise => {
                let w: Vec<Var> = (0..nw)
                    .map(|i| {
                        let e = g.scale(sigma[i], S::std_normal(rng));
                        g.add(mu[i], e)
                    })
                    .collect();
                for &r in rows {
                    let out = spec.build(&mut g, &w, data.inputs.row(r), None)?;
                    data_terms.push(spec.head.build_element(&mut g, &out, data.targets.row(r))?);
                }
            }
            NoiseMethod::Flipout => {
                let delta: Vec<Var> = (0..nw).map(|i| g.scale(sigma[i], S::std_normal(rng))).collect();
                for &r in rows {
                    let s = flipout_signs(spec, rng);
                    let w: Vec<Var> = (0..nw)
                        .map(|i| {
                            let d = g.scale(delta[i], S::lit(s[i]));
                            g.add(mu[i], d)
                        })
                        .collect();
                    let out = spec.build(&mut g, &w, data.inputs.row(r), None)?;
                    data_terms.push(spec.head.build_element(&mut g, &out, data.targets.row(r))?);
                }
            }
            NoiseMethod::LocalReparam => {
                let sigma_sq: Vec<Var> = sigma.iter().map(|&s| g.square(s)).collect();
                for &r in rows {
                    let out = local_reparam_build(spec, &mut g, mu, &sigma_sq, data.inputs.row(r), rng);
                    data_terms.push(spec.head.build_element(&mut g, &out, data.targets.row(r))?);
                }
            }
        }
    }
    let data_sum = g.sum(&data_terms);
    let scale = data.len() as f64 / (rows.len() * n_mc) as f64;
    let data_part = g.scale(data_sum, S::lit(scale));
    let mut neg_kl = Vec::with_capacity(nw);
    for i in 0..nw {
        let sp = prior_sd[i];
        let ls = g.log(sigma[i]);
        let s2 = g.square(sigma[i]);
        let m2 = g.square(mu[i]);
        let quad = g.add(s2, m2);
        let quad = g.scale(quad, S::lit(-0.5 / (sp * sp)));
        let t = g.add(ls, quad);
        neg_kl.push(g.add_const(t, S::lit(0.5 - sp.ln())));
    }
    let kl_part = g.sum(&neg_kl);
    g.add(data_part, kl_part);
    let params: Vec<S> = q.mu.iter().chain(&q.sigma_raw).copied().collect();
    let (value, grad) = g.value_and_gradient(&params).map_err(ModelError::from)?;
    Ok(ElboGradient {
        value,
        d_mu: grad[..nw].to_vec(),
        d_sigma_raw: grad[nw..].to_vec(),
    })
}

/// Mean-field fit of the network weights by stochastic ELBO ascent.
pub fn network_vi_fit<S: Scalar, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    data: &Dataset<S>,
    prior: &PriorSpec,
    method: NoiseMethod,
    init: MeanFieldGaussian<S>,
    cfg: &BbbConfig,
    rng: &mut R,
) -> Result<BbbFit<S>, ViError> {
    prior_sigmas(prior, spec.param_count())?;
    if data.is_empty() {
        return Err(ViError::Precondition("dataset has no rows".into()));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let n_mc = cfg.n_mc;
    stochastic_ascent(init, cfg, Some(data.len()), rng, |q, batch, rng| {
        let rows = batch.unwrap_or(&all);
        match network_elbo_gradient(spec, data, prior, q, rows, method, n_mc, rng) {
            Ok(g) if g.value.is_finite() && g.d_mu.iter().chain(&g.d_sigma_raw).all(|v| v.is_finite()) => Ok(Some(g)),
            Ok(_) | Err(ViError::Model(ModelError::Autodiff(_))) => Ok(None),
            Err(e) => Err(e),
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutTrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Coefficient `λ` of the `λ‖w‖²` penalty.
    pub l2: f64,
    pub minibatch: Option<MinibatchSchedule>,
}

impl Default for DropoutTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 2000,
            l2: 1e-4,
            minibatch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutFit<S> {
    pub params: Vec<S>,
    pub loss_trace: Vec<S>,
}

/// Mean negative log-likelihood under one dropout draw per row, plus
/// `λ‖w‖²`, and its gradient.
pub fn dropout_objective<S: Scalar, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    data: &Dataset<S>,
    dropout: &DropoutSpec,
    l2: f64,
    params: &[S],
    rows: &[usize],
    rng: &mut R,
) -> Result<(S, Vec<S>), ViError> {
    dropout.validate(spec.n_layers() - 1)?;
    if rows.is_empty() {
        return Err(ViError::Precondition("need at least one row".into()));
    }
    let mut g = Graph::new(spec.param_count());
    let p = g.params();
    let mut terms = Vec::with_capacity(rows.len());
    for &r in rows {
        let mut mask = |l: usize, _unit: usize| dropout_multiplier::<S, R>(dropout.kind, dropout.rates[l], rng);
        let out = spec.build(&mut g, &p, data.inputs.row(r), Some(&mut mask))?;
        terms.push(spec.head.build_element(&mut g, &out, data.targets.row(r))?);
    }
    let ll = g.sum(&terms);
    let nll = g.scale(ll, S::lit(-1.0 / rows.len() as f64));
    let sq: Vec<Var> = p.iter().map(|&w| g.square(w)).collect();
    let pen = g.sum(&sq);
    let pen = g.scale(pen, S::lit(l2));
    g.add(nll, pen);
    Ok(g.value_and_gradient(params).map_err(ModelError::from)?)
}

/// Gradient descent on [`dropout_objective`].
pub fn dropout_fit<S: Scalar, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    data: &Dataset<S>,
    dropout: &DropoutSpec,
    init: Vec<S>,
    cfg: &DropoutTrainConfig,
    rng: &mut R,
) -> Result<DropoutFit<S>, ViError> {
    if !(cfg.learning_rate > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(ViError::Config(
            "dropout training needs a positive rate and λ ≥ 0".into(),
        ));
    }
    if init.len() != spec.param_count() {
        return Err(ViError::Precondition(format!(
            "{} initial weights, network needs {}",
            init.len(),
            spec.param_count()
        )));
    }
    let mut stream = match cfg.minibatch {
        Some(s) if s.size == 0 || s.size > data.len() => {
            return Err(ViError::Config(format!(
                "minibatch size {} not in 1..={}",
                s.size,
                data.len()
            )))
        }
        Some(s) => Some(MinibatchStream::new(data.len(), s)),
        None => None,
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let lr = S::lit(cfg.learning_rate);
    let mut w = init;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let rows = match stream.as_mut() {
            Some(s) => s.next_batch().to_vec(),
            None => all.clone(),
        };
        let (loss, grad) = match dropout_objective(spec, data, dropout, cfg.l2, &w, &rows, rng) {
            Ok(r) => r,
            Err(ViError::Model(ModelError::Autodiff(_))) => (S::nan(), Vec::new()),
            Err(e) => return Err(e),
        };
        trace.push(loss);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ViError::FitDiverged {
                iteration: it,
                trace: trace.iter().map(|v| v.to_f64_lossy()).collect(),
            });
        }
        w.iter_mut().zip(&grad).for_each(|(wi, &gi)| *wi = *wi - lr * gi);
    }
    Ok(DropoutFit {
        params: w,
        loss_trace: trace,
    })
}

/// `T` stochastic forward passes with dropout active. Each input's draws hold
/// one row of `E[y | outputs]` per pass.
pub fn mc_dropout_predict<S: Scalar, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &[S],
    dropout: &DropoutSpec,
    x: &Matrix<S>,
    passes: usize,
    rng: &mut R,
) -> Result<PredictiveSamples<S>, ViError> {
    if passes == 0 {
        return Err(ViError::Precondition("need at least one forward pass".into()));
    }
    dropout.validate(spec.n_layers() - 1)?;
    let width = spec.head.expected(&vec![S::zero(); spec.output_width()]).len();
    let t = S::from_usize(passes).unwrap();
    let mut mean = Matrix::zeros(x.rows(), width);
    let mut draws = Vec::with_capacity(x.rows());
    for (i, row) in x.iter_rows().enumerate() {
        let mut d = Matrix::zeros(passes, width);
        for k in 0..passes {
            let mut mask = |l: usize, _unit: usize| dropout_multiplier::<S, R>(dropout.kind, dropout.rates[l], rng);
            let out = spec.forward_row(params, row, Some(&mut mask))?;
            let e = spec.head.expected(&out);
            d.row_mut(k).copy_from_slice(&e);
            for (m, v) in mean.row_mut(i).iter_mut().zip(e) {
                *m = *m + v / t;
            }
        }
        draws.push(d);
    }
    Ok(PredictiveSamples { draws, mean })
}

/// Indices of the `top_k` inputs with the largest BALD mutual information
/// under MC dropout, ties broken by index.
pub fn rank_for_labelling<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &[f64],
    dropout: &DropoutSpec,
    inputs: &Matrix<f64>,
    passes: usize,
    top_k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, ViError> {
    if passes < 2 {
        return Err(ViError::Precondition("BALD needs at least two passes".into()));
    }
    let preds = mc_dropout_predict(spec, params, dropout, inputs, passes, rng)?;
    let scores = crate::diagnostics::bald_scores(&preds).map_err(|e| ViError::Precondition(e.to_string()))?;
    Ok(crate::diagnostics::rank_by_score(&scores, top_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::heads::LikelihoodHead;
    use crate::models::network::Activation;
    use crate::vi::layers::DropoutKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn regression(n: usize, seed: u64) -> (NetworkSpec, Dataset<f64>) {
        let spec = NetworkSpec::new(vec![1, 3, 1], vec![Activation::Tanh], LikelihoodHead::UnitGaussian).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|&v| v.sin() + 0.1 * f64::std_normal(&mut rng)).collect();
        let data = Dataset::new(Matrix::from_vec(n, 1, x), Matrix::from_vec(n, 1, y)).unwrap();
        (spec, data)
    }

    fn classifier(n: usize, seed: u64) -> (NetworkSpec, Dataset<f64>) {
        let spec = NetworkSpec::new(
            vec![2, 8, 2],
            vec![Activation::Tanh],
            LikelihoodHead::Categorical { classes: 2 },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            xs.extend([a, b]);
            ys.push(if a + b + 0.3 * f64::std_normal(&mut rng) > 0.0 {
                1.0
            } else {
                0.0
            });
        }
        (
            spec,
            Dataset::new(Matrix::from_vec(n, 2, xs), Matrix::from_vec(n, 1, ys)).unwrap(),
        )
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let (spec, data) = regression(6, 0);
        let prior = PriorSpec::isotropic(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nw = spec.param_count();
        let mu: Vec<f64> = (0..nw).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = MeanFieldGaussian::new(mu, &vec![0.2; nw]).unwrap();
        let rows = [0, 2, 5];
        for method in [
            NoiseMethod::SharedNoise,
            NoiseMethod::LocalReparam,
            NoiseMethod::Flipout,
        ] {
            let eval = |q: &MeanFieldGaussian<f64>| {
                let mut r = ChaCha8Rng::seed_from_u64(9);
                network_elbo_gradient(&spec, &data, &prior, q, &rows, method, 2, &mut r).unwrap()
            };
            let g = eval(&q);
            let h = 1e-6;
            for i in [0, nw - 1] {
                let mut qp = q.clone();
                qp.mu[i] += h;
                let mut qm = q.clone();
                qm.mu[i] -= h;
                let fd = (eval(&qp).value - eval(&qm).value) / (2.0 * h);
                assert!(
                    (fd - g.d_mu[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "{method:?} μ{i}: {fd} vs {}",
                    g.d_mu[i]
                );
                let mut qp = q.clone();
                qp.sigma_raw[i] += h;
                let mut qm = q.clone();
                qm.sigma_raw[i] -= h;
                let fd = (eval(&qp).value - eval(&qm).value) / (2.0 * h);
                assert!(
                    (fd - g.d_sigma_raw[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "{method:?} σ{i}"
                );
            }
        }
    }

    #[test]
    fn uniform_prior_rejected() {
        let (spec, data) = regression(4, 2);
        let q = MeanFieldGaussian::standard(spec.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = network_elbo_gradient(
            &spec,
            &data,
            &PriorSpec::uniform(-1.0, 1.0),
            &q,
            &[0],
            NoiseMethod::Flipout,
            1,
            &mut rng,
        );
        assert!(matches!(r, Err(ViError::Config(_))));
    }

    #[test]
    fn vi_fit_improves_elbo() {
        let (spec, data) = regression(40, 3);
        let prior = PriorSpec::isotropic(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nw = spec.param_count();
        let mu: Vec<f64> = (0..nw).map(|_| 0.5 * f64::std_normal(&mut rng)).collect();
        let init = MeanFieldGaussian::new(mu, &vec![0.1; nw]).unwrap();
        let cfg = BbbConfig {
            learning_rate: 2e-3,
            n_mc: 1,
            iterations: 600,
            minibatch: Some(MinibatchSchedule {
                size: 10,
                shuffle_seed: 1,
            }),
            ..BbbConfig::default()
        };
        for method in [NoiseMethod::LocalReparam, NoiseMethod::Flipout] {
            let fit = network_vi_fit(&spec, &data, &prior, method, init.clone(), &cfg, &mut rng).unwrap();
            let head: f64 = fit.elbo_trace[..50].iter().sum::<f64>() / 50.0;
            let tail: f64 = fit.elbo_trace[550..].iter().sum::<f64>() / 50.0;
            assert!(tail > head, "{method:?}: {head} -> {tail}");
        }
    }

    #[test]
    fn deterministic_dropout_prediction() {
        let (spec, _) = regression(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params: Vec<f64> = (0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_rows(&[vec![0.4], vec![-1.0]]);
        let keep_all = DropoutSpec {
            kind: DropoutKind::Bernoulli,
            rates: vec![1.0],
            n_mc: 1,
        };
        let p = mc_dropout_predict(&spec, &params, &keep_all, &x, 1, &mut rng).unwrap();
        let direct = crate::models::network::mlp_forward(&spec, &params, &x).unwrap();
        assert_eq!(p.mean, direct);
        let zeros = vec![0.0; spec.param_count()];
        let half = DropoutSpec {
            rates: vec![0.5],
            ..keep_all
        };
        let p = mc_dropout_predict(&spec, &zeros, &half, &x, 5, &mut rng).unwrap();
        assert!(p.draws.iter().all(|d| d.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mc_dropout_classifier_has_spread() {
        let (spec, data) = classifier(200, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let init: Vec<f64> = (0..spec.param_count())
            .map(|_| 0.5 * f64::std_normal(&mut rng))
            .collect();
        let dropout = DropoutSpec {
            kind: DropoutKind::Bernoulli,
            rates: vec![0.7],
            n_mc: 20,
        };
        let cfg = DropoutTrainConfig {
            learning_rate: 0.1,
            iterations: 300,
            ..DropoutTrainConfig::default()
        };
        let fit = dropout_fit(&spec, &data, &dropout, init, &cfg, &mut rng).unwrap();
        assert!(fit.loss_trace.last().unwrap() < &fit.loss_trace[0]);
        let (_, held) = classifier(100, 8);
        let preds = mc_dropout_predict(&spec, &fit.params, &dropout, &held.inputs, 20, &mut rng).unwrap();
        let spread = preds.spread();
        let positive = (0..held.len()).filter(|&i| spread[(i, 1)] > 0.0).count();
        assert!(positive as f64 >= 0.95 * held.len() as f64);
        let ranked = rank_for_labelling(&spec, &fit.params, &dropout, &held.inputs, 20, 5, &mut rng).unwrap();
        assert_eq!(ranked.len(), 5);
    }
}
