use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deskbayes"));
    c.env_remove("DESKBAYES_OUTPUT_DIR");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_config(dir: &Path, name: &str, text: &str) -> Output {
    let cfg = write(dir, name, text);
    bin().arg("run").arg(cfg).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const HMC: &str = r#"
seed = 11
method = "hmc"
output_dir = "out"
[target]
kind = "gaussian"
mean = [1.0, -1.0]
variances = [1.0, 4.0]
[mcmc]
chains = 2
samples = 300
burn_in = 200
"#;

fn toy_regression(dir: &Path) -> PathBuf {
    let mut s = String::from("x_0,y_0\n");
    for i in 0..40 {
        let x = -2.0 + 4.0 * i as f64 / 39.0;
        s.push_str(&format!(
            "{x},{}\n",
            (1.5 * x).sin() + 0.05 * ((i * 7 % 11) as f64 - 5.0)
        ));
    }
    write(dir, "toy.csv", &s)
}

fn mlp_config(method: &str, extra: &str) -> String {
    format!(
        r#"
seed = 5
method = "{method}"
output_dir = "out-{method}"
[target]
kind = "mlp"
dataset = "toy.csv"
widths = [1, 6, 1]
head = "unit-gaussian"
minibatch_size = 10
{extra}
[mcmc]
chains = 2
samples = 150
burn_in = 100
step_size = 0.01
[vi]
iterations = 150
n_mc = 2
passes = 10
elbo_samples = 20
"#
    )
}

#[test]
fn hmc_run_writes_chains_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_config(dir.path(), "hmc.toml", HMC));
    let out = dir.path().join("out");
    let stats = json(&out.join("stats.json"));
    let acc = stats["acceptance_rate"].as_f64().unwrap();
    assert!(acc > 0.0 && acc <= 1.0);
    assert_eq!(stats["r_hat"].as_array().unwrap().len(), 2);
    let manifest = json(&out.join("manifest.json"));
    let names: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["chain_0.dbc", "chain_1.dbc", "stats.json"]);
    assert_eq!(manifest["seed"], 11);

    let chain = deskbayes_cli::load_chain(&out.join("chain_0.dbc")).unwrap();
    assert_eq!((chain.n_kept(), chain.dim()), (300, 2));

    let diag = bin()
        .arg("diagnose")
        .arg(out.join("chain_0.dbc"))
        .arg(out.join("chain_1.dbc"))
        .output()
        .unwrap();
    assert_ok(&diag);
    let d: Value = serde_json::from_slice(&diag.stdout).unwrap();
    assert_eq!(d["chains"], 2);
    assert!(d["r_hat"][0].as_f64().unwrap() < 1.2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hmc.toml", HMC);
    let hashes: Vec<String> = (0..2)
        .map(|_| {
            let out = bin().arg("run").arg(&cfg).output().unwrap();
            assert_ok(&out);
            let v: Value = serde_json::from_slice(&out.stdout).unwrap();
            v["manifest_sha256"].as_str().unwrap().to_string()
        })
        .collect();
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn output_dir_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hmc.toml", HMC);
    let target = dir.path().join("elsewhere");
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .env("DESKBAYES_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(target.join("manifest.json").is_file());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bbb_writes_variational_state() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
seed = 3
method = "bbb"
[target]
kind = "gaussian"
mean = [2.0]
[vi]
iterations = 500
learning_rate = 0.02
"#;
    assert_ok(&run_config(dir.path(), "vi.toml", text));
    let state = json(&dir.path().join("vi.out/variational.json"));
    assert_eq!(state["mu"].as_array().unwrap().len(), 1);
    assert!(state["sigma"][0].as_f64().unwrap() > 0.0);
    assert_eq!(state["elbo_trace"].as_array().unwrap().len(), 500);
    assert!(json(&dir.path().join("vi.out/stats.json"))["final_elbo"].is_number());

    let csv = dir.path().join("elbo.csv");
    let p = bin()
        .args(["plotdata", "elbo-trace"])
        .arg(dir.path().join("vi.out/variational.json"))
        .arg(&csv)
        .output()
        .unwrap();
    assert_ok(&p);
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("iter,elbo\n"));
    assert_eq!(text.lines().count(), 501);
}

#[test]
fn every_analytic_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    for (method, extra) in [
        ("mh", ""),
        ("nuts", ""),
        ("qnhmc", ""),
        ("rmhmc", ""),
        ("cavi", "[vi]\ngrid_points = 41\n"),
        ("neutra", "[vi]\nneutra_fit_iterations = 200\nneutra_fit_n_mc = 2\n"),
    ] {
        let text = format!(
            "seed = 2\nmethod = \"{method}\"\n[target]\nkind = \"gaussian\"\nmean = [0.5, 0.0]\ncov = [[1.0, 0.5], [0.5, 2.0]]\n[mcmc]\nchains = 2\nsamples = 120\nburn_in = 100\n{extra}"
        );
        let out = run_config(dir.path(), &format!("{method}.toml"), &text);
        assert_ok(&out);
        assert!(
            dir.path().join(format!("{method}.out/manifest.json")).is_file(),
            "{method}"
        );
    }
    let state = json(&dir.path().join("cavi.out/variational.json"));
    assert_eq!(state["factors"].as_array().unwrap().len(), 2);
}

#[test]
fn every_network_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    toy_regression(dir.path());
    for method in [
        "sghmc",
        "hmc",
        "bbb",
        "local-reparam",
        "flipout",
        "variational-dropout",
        "mc-dropout",
    ] {
        let out = run_config(dir.path(), &format!("{method}.toml"), &mlp_config(method, ""));
        assert_ok(&out);
        assert!(
            dir.path().join(format!("out-{method}/manifest.json")).is_file(),
            "{method}"
        );
    }
    let state = json(&dir.path().join("out-mc-dropout/variational.json"));
    assert_eq!(state["params"].as_array().unwrap().len(), 6 + 6 + 6 + 1);
    assert_eq!(state["predictive_std"].as_array().unwrap().len(), 40);
}

#[test]
fn validation_errors_exit_1_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    toy_regression(dir.path());
    let no_batch = mlp_config("sghmc", "").replace("minibatch_size = 10\n", "");
    let out = run_config(dir.path(), "sg.toml", &no_batch);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("minibatch"));
    assert!(!dir.path().join("out-sghmc").exists());

    let out = run_config(
        dir.path(),
        "fl.toml",
        &mlp_config("flipout", "prior_uniform = [-5.0, 5.0]"),
    );
    assert_eq!(out.status.code(), Some(1));

    let missing = mlp_config("bbb", "").replace("toy.csv", "absent.csv");
    assert_eq!(run_config(dir.path(), "m.toml", &missing).status.code(), Some(1));

    let out = run_config(
        dir.path(),
        "c.toml",
        "seed = 1\nmethod = \"cavi\"\n[target]\nkind = \"funnel\"\ndim = 4\n",
    );
    assert_eq!(out.status.code(), Some(1));

    let out = run_config(
        dir.path(),
        "b.toml",
        "method = \"hmc\"\n[target]\nkind = \"funnel\"\ndim = 3\n",
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numeric_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
seed = 3
method = "hmc"
[target]
kind = "funnel"
dim = 3
[mcmc]
chains = 1
samples = 100
burn_in = 100
step_size = 40.0
adapt_step_size = false
init = [-4.0, 0.1, 0.1]
init_jitter = 0.0
"#;
    let out = run_config(dir.path(), "f.toml", text);
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn calibrate_and_reliability_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = String::from("prob,label\n");
    for i in 0..400 {
        let p = (i as f64 + 0.5) / 400.0;
        let label = ((i * 37) % 100) as f64 / 100.0 < p;
        s.push_str(&format!("{p},{}\n", label as u8));
    }
    let probs = write(dir.path(), "probs.csv", &s);
    let out = bin().arg("calibrate").arg(&probs).output().unwrap();
    assert_ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["ece"].as_f64().unwrap() < 0.1);
    assert!(v["platt"]["a"].is_number());

    let csv = dir.path().join("rel.csv");
    assert_ok(
        &bin()
            .args(["plotdata", "reliability"])
            .arg(&probs)
            .arg(&csv)
            .output()
            .unwrap(),
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 11);

    let bad = write(dir.path(), "bad.csv", "prob,label\n0.5,7\n");
    assert_eq!(bin().arg("calibrate").arg(bad).output().unwrap().status.code(), Some(1));
    assert_eq!(
        bin()
            .args(["plotdata", "bogus"])
            .arg(&probs)
            .arg(&csv)
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn trace_plot_from_chain() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_config(dir.path(), "hmc.toml", HMC));
    let chain = dir.path().join("out/chain_0.dbc");
    let csv = dir.path().join("trace.csv");
    assert_ok(
        &bin()
            .args(["plotdata", "trace"])
            .arg(&chain)
            .arg(&csv)
            .output()
            .unwrap(),
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "iter,dim_0,dim_1");
    assert_eq!(text.lines().count(), 301);
    let dens = dir.path().join("dens.csv");
    assert_ok(
        &bin()
            .args(["plotdata", "predictive-density"])
            .arg(&chain)
            .arg(&dens)
            .output()
            .unwrap(),
    );

    let junk = write(dir.path(), "junk.dbc", "not a chain");
    let out = bin().arg("diagnose").arg(junk).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unrecognised format"));
}
