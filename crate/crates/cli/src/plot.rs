//! CSV series for plotting. No rendering happens here.

use std::fmt::Write as _;
use std::path::Path;

use deskbayes::diagnostics::reliability_diagram;
use deskbayes::Chain;

use crate::chainfile::load_chain;
use crate::dataset::load_probabilities_csv;
use crate::error::CliError;

pub const RELIABILITY_BINS: usize = 10;
pub const DENSITY_BINS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// `iter,dim_0,...` from a chain file.
    Trace,
    /// `dim,x,density` histogram per coordinate from a chain file.
    PredictiveDensity,
    /// `bin_mid,mean_prob,frac_pos,count` from a `prob,label` CSV.
    Reliability,
    /// `iter,elbo` (or `iter,loss`) from a variational-state JSON file.
    ElboTrace,
}

impl std::str::FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "trace" => Ok(PlotKind::Trace),
            "predictive-density" => Ok(PlotKind::PredictiveDensity),
            "reliability" => Ok(PlotKind::Reliability),
            "elbo-trace" => Ok(PlotKind::ElboTrace),
            _ => Err(CliError::Validation(format!(
                "unknown plot kind `{s}`; expected trace, predictive-density, reliability or elbo-trace"
            ))),
        }
    }
}

pub fn trace_csv(chain: &Chain) -> String {
    let mut s = String::from("iter");
    for j in 0..chain.dim() {
        write!(s, ",dim_{j}").unwrap();
    }
    s.push('\n');
    for (i, row) in chain.samples.iter_rows().enumerate() {
        write!(s, "{i}").unwrap();
        for v in row {
            write!(s, ",{v:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn density_csv(chain: &Chain, bins: usize) -> String {
    let mut s = String::from("dim,x,density\n");
    let n = chain.n_kept();
    for j in 0..chain.dim() {
        let col = chain.samples.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for &v in &col {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let x = lo + (k as f64 + 0.5) * width;
            let density = c as f64 / (n as f64 * width);
            writeln!(s, "{j},{x:?},{density:?}").unwrap();
        }
    }
    s
}

pub fn reliability_csv(probs: &[f64], labels: &[bool], bins: usize) -> Result<String, CliError> {
    let diagram = reliability_diagram(probs, labels, bins)?;
    let mut s = String::from("bin_mid,mean_prob,frac_pos,count\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    for b in &diagram.bins {
        writeln!(s, "{:?},{},{},{}", b.mid(), opt(b.mean_prob), opt(b.frac_pos), b.count).unwrap();
    }
    Ok(s)
}

pub fn elbo_trace_csv(state: &serde_json::Value) -> Result<String, CliError> {
    let (column, trace) = if let Some(t) = state.get("elbo_trace") {
        ("elbo", t)
    } else if let Some(t) = state.get("loss_trace") {
        ("loss", t)
    } else {
        return Err(CliError::Validation(
            "state file has no elbo_trace or loss_trace".into(),
        ));
    };
    let values = trace
        .as_array()
        .ok_or_else(|| CliError::Validation(format!("{column} trace is not an array")))?;
    let mut s = format!("iter,{column}\n");
    for (i, v) in values.iter().enumerate() {
        // non-finite values were written as null
        match v.as_f64() {
            Some(x) => writeln!(s, "{i},{x:?}").unwrap(),
            None => writeln!(s, "{i},").unwrap(),
        }
    }
    Ok(s)
}

pub fn emit_plot_data(kind: PlotKind, input: &Path, output: &Path) -> Result<(), CliError> {
    let text = match kind {
        PlotKind::Trace => trace_csv(&load_chain(input)?),
        PlotKind::PredictiveDensity => density_csv(&load_chain(input)?, DENSITY_BINS),
        PlotKind::Reliability => {
            let (p, l) = load_probabilities_csv(input)?;
            reliability_csv(&p, &l, RELIABILITY_BINS)?
        }
        PlotKind::ElboTrace => {
            let bytes = std::fs::read(input).map_err(|e| CliError::io(input, e))?;
            let state: serde_json::Value = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Validation(format!("{}: {e}", input.display())))?;
            elbo_trace_csv(&state)?
        }
    };
    std::fs::write(output, text).map_err(|e| CliError::io(output, e))
}
