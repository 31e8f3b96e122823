use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deskbayes::diagnostics::{chain_stats, expected_calibration_error, platt_apply, platt_fit, reliability_diagram};
use deskbayes_cli::{
    emit_plot_data, load_chain, load_probabilities_csv, resolve_output_dir, run_experiment, CliError, ExperimentConfig,
    PlotKind,
};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "deskbayes",
    version,
    about = "Bayesian inference for small differentiable models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// ESS, R-hat and acceptance for one or more chain files.
    Diagnose {
        #[arg(required = true)]
        chains: Vec<PathBuf>,
    },
    /// Reliability, ECE and Platt scaling for a `prob,label` CSV.
    Calibrate {
        probs: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Write plot data: trace, predictive-density, reliability or elbo-trace.
    Plotdata {
        kind: String,
        input: PathBuf,
        output: PathBuf,
    },
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json serialises"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = resolve_output_dir(&cfg, &config);
            let summary = run_experiment(&cfg, &dir)?;
            print_json(&json!({
                "output_dir": summary.output_dir,
                "manifest_sha256": summary.manifest_sha256,
                "files": summary.manifest.files.iter().map(|f| &f.name).collect::<Vec<_>>(),
            }));
        }
        Command::Diagnose { chains } => {
            let loaded = chains.iter().map(|p| load_chain(p)).collect::<Result<Vec<_>, _>>()?;
            let s = chain_stats(&loaded)?;
            print_json(&json!({
                "chains": loaded.len(),
                "draws_per_chain": loaded.iter().map(|c| c.n_kept()).collect::<Vec<_>>(),
                "acceptance_rate": s.acceptance_rate,
                "divergences": s.divergences,
                "ess": s.ess,
                "ess_degenerate": s.degenerate,
                "r_hat": s.r_hat,
            }));
        }
        Command::Calibrate { probs, bins } => {
            let (p, labels) = load_probabilities_csv(&probs)?;
            let raw = reliability_diagram(&p, &labels, bins)?;
            let model = platt_fit(&p, &labels)?;
            let calibrated = platt_apply(model, &p);
            let after = reliability_diagram(&calibrated, &labels, bins)?;
            print_json(&json!({
                "n": p.len(),
                "bins": bins,
                "ece": expected_calibration_error(&raw),
                "platt": { "a": model.a, "b": model.b },
                "ece_calibrated": expected_calibration_error(&after),
            }));
        }
        Command::Plotdata { kind, input, output } => emit_plot_data(kind.parse::<PlotKind>()?, &input, &output)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
