use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use filtercontract::harness::{run_experiment, ExperimentConfig, ExperimentReport, Scenario};

/// Check Wasserstein contraction bounds of nonlinear filters against
/// exact, particle and grid computations.
#[derive(Parser)]
#[command(name = "filtercontract", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contraction rates for β = -λI against their closed forms.
    Rates(RunArgs),
    /// Exact Kalman filters against the contraction bound.
    KalmanCheck(RunArgs),
    /// Particle filters with a logistic likelihood against the bound.
    PfContract(RunArgs),
    /// Bound and Kalman check for a model and its doubled copy.
    TensorCheck(RunArgs),
    /// Noise-free signal, where the bound holds with equality.
    Tightness(RunArgs),
    /// Synchronous coupling of the h-transformed signal.
    Couple(RunArgs),
    /// Weighted Wasserstein contraction of grid filters.
    SmoothW(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the CSV and JSON reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "FILTERCONTRACT_THREADS")]
    threads: Option<usize>,
    /// Print only the final verdict.
    #[arg(long)]
    quiet: bool,
}

impl Command {
    fn split(self) -> (Scenario, RunArgs) {
        match self {
            Command::Rates(a) => (Scenario::RateTable, a),
            Command::KalmanCheck(a) => (Scenario::KalmanContraction, a),
            Command::PfContract(a) => (Scenario::PfLogisticContraction, a),
            Command::TensorCheck(a) => (Scenario::TensorInvariance, a),
            Command::Tightness(a) => (Scenario::Tightness, a),
            Command::Couple(a) => (Scenario::CouplingPathwise, a),
            Command::SmoothW(a) => (Scenario::SmoothingTheorem2, a),
        }
    }
}

fn load_config(scenario: Scenario, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        None => ExperimentConfig::default_for(scenario),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let obj = value.as_object_mut().context("config must be a JSON object")?;
            match obj.get("scenario") {
                None => {
                    obj.insert("scenario".into(), scenario.name().into());
                }
                Some(s) if s.as_str() == Some(scenario.name()) => {}
                Some(s) => bail!("config scenario {s} does not match subcommand ({})", scenario.name()),
            }
            serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))?
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into())
}

fn print_report(report: &ExperimentReport) {
    println!("{:>4}  {:>14}  {:>14}  {:>14}  pass", "k", "distance", "bound", "ratio");
    for r in &report.rows {
        println!("{:>4}  {:>14.6e}  {:>14.6e}  {:>14}  {}", r.k, r.distance, r.bound, opt(r.ratio), r.pass);
    }
    for (name, value) in &report.metadata.diagnostics {
        println!("{name} = {value:.6e}");
    }
    for entry in &report.metadata.table {
        let cells: Vec<String> = entry.iter().map(|(k, v)| format!("{k}={v:.10e}")).collect();
        println!("{}", cells.join(" "));
    }
}

fn main() -> ExitCode {
    let (scenario, args) = Cli::parse().command.split();
    let result = load_config(scenario, &args).and_then(|cfg| Ok(run_experiment(&cfg)?));
    match result {
        Ok(report) => {
            if !args.quiet {
                print_report(&report);
            }
            let pass = report.all_pass();
            println!("{}: {}", scenario.name(), if pass { "PASS" } else { "FAIL" });
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
