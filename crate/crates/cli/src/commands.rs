//! Single-run and verification commands.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use encircle_core::{
    load_scenario_file, paper_scenario, read_trace, run_scenario, summarize, write_trace,
    RunSummary, ScenarioConfig, Trace, TraceFormat,
};
use serde::Serialize;

/// Loads the scenario at `path` (the built-in reference scenario when
/// `None`) and applies an optional seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let cfg = match path {
        Some(p) => {
            load_scenario_file(p).with_context(|| format!("loading scenario {}", p.display()))?
        }
        None => paper_scenario(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// Runs one scenario and summarizes it, recording the wall time.
pub fn run_once(cfg: &ScenarioConfig) -> Result<(Trace, RunSummary)> {
    let start = Instant::now();
    let trace = run_scenario(cfg).with_context(|| format!("simulating seed {}", cfg.run.seed))?;
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut summary = summarize(&trace).context("analysing trace")?;
    summary.wall_time_ms = Some(wall_time_ms);
    Ok((trace, summary))
}

pub fn write_trace_file(trace: &Trace, format: TraceFormat, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    write_trace(trace, format, &mut out).with_context(|| format!("writing {}", path.display()))?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    /// What was checked: a scenario path or a trace path.
    pub source: String,
    pub passed: bool,
    pub hard_failures: Vec<String>,
    pub summary: RunSummary,
}

fn report(source: String, trace: &Trace) -> Result<VerifyReport> {
    let summary = summarize(trace).context("analysing trace")?;
    let hard_failures = summary.hard_failures(trace.config.run.range_noise_std == 0.0);
    Ok(VerifyReport {
        source,
        passed: hard_failures.is_empty(),
        hard_failures,
        summary,
    })
}

/// Runs a scenario and checks gates and identities on the result.
pub fn verify_scenario(cfg: &ScenarioConfig, source: &str) -> Result<VerifyReport> {
    let trace = run_scenario(cfg).with_context(|| format!("simulating seed {}", cfg.run.seed))?;
    report(source.to_string(), &trace)
}

/// Reads and replays a recorded trace, then checks it.
pub fn verify_trace(path: &Path) -> Result<VerifyReport> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trace = read_trace(BufReader::new(file))
        .with_context(|| format!("reading trace {}", path.display()))?;
    report(path.display().to_string(), &trace)
}
