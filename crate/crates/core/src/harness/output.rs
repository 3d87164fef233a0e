use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::report::{emit_table, ExperimentReport, TableFormat, Timings};
use super::ExperimentConfig;

/// Environment variable naming the results root.
pub const RESULTS_ENV: &str = "ROBOS_RESULTS";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a> {
    pub experiment: String,
    pub title: &'static str,
    pub master_seed: u64,
    pub n_trials: u32,
    pub code_version: &'static str,
    pub timestamp: u64,
    pub config: &'a ExperimentConfig,
    pub median_swap_ns: Option<u64>,
    pub median_update_ns: Option<u64>,
    pub median_trial_ns: Option<u64>,
    pub timings: Option<&'a Timings>,
}

/// Writes `<root>/<id>/<timestamp>-<seed>/{table.md, table.csv, manifest.json, audit.log}`
/// and returns the run directory.
pub fn write_results(root: &Path, report: &ExperimentReport, timestamp: u64) -> io::Result<PathBuf> {
    let cfg = &report.config;
    let dir = root.join(cfg.id.as_str()).join(format!("{timestamp}-{}", cfg.master_seed));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("table.md"), emit_table(report, TableFormat::Markdown))?;
    fs::write(dir.join("table.csv"), emit_table(report, TableFormat::Csv))?;
    let manifest = RunManifest {
        experiment: cfg.id.to_string(),
        title: cfg.id.title(),
        master_seed: cfg.master_seed,
        n_trials: cfg.n_trials,
        code_version: env!("CARGO_PKG_VERSION"),
        timestamp,
        config: cfg,
        median_swap_ns: report.timings.as_ref().and_then(Timings::median_swap_ns),
        median_update_ns: report.timings.as_ref().and_then(Timings::median_update_ns),
        median_trial_ns: report.timings.as_ref().and_then(Timings::median_trial_ns),
        timings: report.timings.as_ref(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let mut audit = BufWriter::new(fs::File::create(dir.join("audit.log"))?);
    for r in &report.audit {
        serde_json::to_writer(&mut audit, r)?;
        audit.write_all(b"\n")?;
    }
    audit.flush()?;
    Ok(dir)
}
