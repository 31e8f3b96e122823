use crate::error::DiagnosticsError;
use crate::scalar::{logit, sigmoid};

const CLIP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    /// `None` for an empty bin.
    pub mean_prob: Option<f64>,
    pub frac_pos: Option<f64>,
    pub count: usize,
}

impl Bin {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Equal-width bins on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityBins {
    pub bins: Vec<Bin>,
}

impl ReliabilityBins {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `fraction − mean probability` per non-empty bin.
    pub fn residuals(&self) -> Vec<Option<f64>> {
        self.bins.iter().map(|b| Some(b.frac_pos? - b.mean_prob?)).collect()
    }
}

fn check_inputs(probs: &[f64], labels: &[bool]) -> Result<(), DiagnosticsError> {
    if probs.is_empty() {
        return Err(DiagnosticsError::Precondition("no predictions given".into()));
    }
    if probs.len() != labels.len() {
        return Err(DiagnosticsError::Precondition(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(DiagnosticsError::Precondition(format!(
            "probability {i} outside [0, 1]"
        )));
    }
    Ok(())
}

pub fn reliability_diagram(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<ReliabilityBins, DiagnosticsError> {
    check_inputs(probs, labels)?;
    if n_bins == 0 {
        return Err(DiagnosticsError::Precondition("need at least one bin".into()));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut pos = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let k = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sum_p[k] += p;
        pos[k] += y as usize;
        count[k] += 1;
    }
    let bins = (0..n_bins)
        .map(|k| {
            let c = count[k];
            Bin {
                lo: k as f64 / n_bins as f64,
                hi: (k + 1) as f64 / n_bins as f64,
                mean_prob: (c > 0).then(|| sum_p[k] / c as f64),
                frac_pos: (c > 0).then(|| pos[k] as f64 / c as f64),
                count: c,
            }
        })
        .collect();
    Ok(ReliabilityBins { bins })
}

/// `Σ (count / total) |fraction − mean probability|` over non-empty bins.
pub fn expected_calibration_error(bins: &ReliabilityBins) -> f64 {
    let total = bins.total();
    if total == 0 {
        return 0.0;
    }
    bins.bins
        .iter()
        .filter_map(|b| Some(b.count as f64 / total as f64 * (b.frac_pos? - b.mean_prob?).abs()))
        .sum()
}

/// `p ↦ σ(a · logit(p) + b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlattModel {
    pub a: f64,
    pub b: f64,
}

impl PlattModel {
    pub const IDENTITY: PlattModel = PlattModel { a: 1.0, b: 0.0 };
}

fn clipped_logit(p: f64) -> f64 {
    logit(p.clamp(CLIP, 1.0 - CLIP))
}

fn log_lik(z: &[f64], labels: &[bool], a: f64, b: f64) -> f64 {
    z.iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let t = a * z + b;
            // log σ(t) = −softplus(−t), log(1 − σ(t)) = −softplus(t)
            if y {
                -crate::scalar::softplus(-t)
            } else {
                -crate::scalar::softplus(t)
            }
        })
        .sum()
}

/// Maximum-likelihood Platt parameters by damped Newton iterations.
pub fn platt_fit(probs: &[f64], labels: &[bool]) -> Result<PlattModel, DiagnosticsError> {
    check_inputs(probs, labels)?;
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(DiagnosticsError::Precondition(
            "platt scaling needs both classes".into(),
        ));
    }
    let z: Vec<f64> = probs.iter().map(|&p| clipped_logit(p)).collect();
    let (mut a, mut b) = (1.0, 0.0);
    let mut ll = log_lik(&z, labels, a, b);
    let mut trace = vec![(a, b)];
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&zi, &y) in z.iter().zip(labels) {
            let s = sigmoid(a * zi + b);
            let r = y as u8 as f64 - s;
            let w = s * (1.0 - s);
            ga += r * zi;
            gb += r;
            haa += w * zi * zi;
            hab += w * zi;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        if !(det > 0.0) {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        let mut step = 1.0;
        let (mut na, mut nb, mut nll);
        loop {
            na = a + step * da;
            nb = b + step * db;
            nll = log_lik(&z, labels, na, nb);
            if nll >= ll - 1e-12 || step < 1e-8 {
                break;
            }
            step *= 0.5;
        }
        let moved = (na - a).abs().max((nb - b).abs());
        a = na;
        b = nb;
        ll = nll;
        trace.push((a, b));
        if moved < 1e-10 {
            return Ok(PlattModel { a, b });
        }
    }
    Err(DiagnosticsError::NoConvergence { iterations: 100, trace })
}

pub fn platt_apply(model: PlattModel, probs: &[f64]) -> Vec<f64> {
    if model == PlattModel::IDENTITY {
        return probs.to_vec();
    }
    probs
        .iter()
        .map(|&p| sigmoid(model.a * clipped_logit(p) + model.b))
        .collect()
}
