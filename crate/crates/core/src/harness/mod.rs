//! Experiment configuration, the verification scenarios and report output.

pub mod config;
pub mod report;
mod scenarios;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, LikelihoodSpec, ModelSpec, Scenario, ScenarioOptions};
pub use report::{emit_report, ExperimentReport, ReportFormat, ReportMetadata, ReportRow};
pub use scenarios::generate_observations;

use crate::error::{Error, Result};

/// Run the configured scenario on its own worker pool and, when `out` is
/// set, write `<scenario>.csv` and `<scenario>.json` there.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let outcome = pool.install(|| scenarios::run(config))?;
    let report = ExperimentReport {
        rows: outcome.rows,
        metadata: ReportMetadata {
            config: config.clone(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: start.elapsed().as_secs_f64(),
            threads: pool.current_num_threads(),
            diagnostics: outcome.diagnostics,
            series: outcome.series,
            table: outcome.table,
        },
    };
    if let Some(dir) = &config.out {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

/// Write both report formats into `dir`, returning the CSV and JSON paths.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let name = report.metadata.config.scenario.name();
    let csv = dir.join(format!("{name}.csv"));
    let json = dir.join(format!("{name}.json"));
    emit_report(report, ReportFormat::Csv, &csv)?;
    emit_report(report, ReportFormat::Json, &json)?;
    Ok((csv, json))
}
