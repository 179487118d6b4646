//! Independent runs over many seeds, aggregated.

use std::path::PathBuf;

use anyhow::{Context, Result};
use encircle_core::analysis::median;
use encircle_core::{RunSummary, ScenarioConfig, TraceFormat};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{run_once, write_trace_file};

/// Where to write per-seed traces, if anywhere.
#[derive(Debug, Clone)]
pub struct TraceOutput {
    pub dir: PathBuf,
    pub format: TraceFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Summary without wall time, so repeated seeds give identical rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Median, minimum and maximum of one per-run statistic over the
/// successful runs that define it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Spread {
    fn of(mut values: Vec<f64>) -> Option<Self> {
        let count = values.len();
        let min = values.iter().copied().reduce(f64::min)?;
        let max = values.iter().copied().reduce(f64::max)?;
        Some(Self {
            median: median(&mut values)?,
            min,
            max,
            count,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub failed: usize,
    pub e_hat_max: Option<Spread>,
    pub e_s_max: Option<Spread>,
    pub radius1_median: Option<Spread>,
    pub radius2_median: Option<Spread>,
    pub antipodality_median: Option<Spread>,
    /// Impulses with a defined pre-impulse band.
    pub impulses_rated: usize,
    /// Rated impulses whose error returned to the band within `ell_min` steps.
    pub impulses_recaptured: usize,
    pub estimator_residual_max: Option<f64>,
    pub as_residual_max: Option<f64>,
    pub propagation_residual_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchReport {
    pub config_digest: String,
    pub runs: Vec<SeedRun>,
    pub aggregate: Aggregate,
    /// Wall time of each run in `runs` order; `None` for failed runs.
    pub wall_time_ms: Vec<Option<f64>>,
}

impl BatchReport {
    pub fn any_failed(&self) -> bool {
        self.aggregate.failed > 0
    }
}

pub fn aggregate(runs: &[SeedRun], ell_min: u64) -> Aggregate {
    let ok: Vec<&RunSummary> = runs.iter().filter_map(|r| r.summary.as_ref()).collect();
    let collect = |f: &dyn Fn(&RunSummary) -> Option<f64>| {
        Spread::of(ok.iter().filter_map(|s| f(s)).collect())
    };
    let max_of = |f: &dyn Fn(&RunSummary) -> f64| ok.iter().map(|s| f(s)).reduce(f64::max);
    let (mut rated, mut recaptured) = (0, 0);
    for s in &ok {
        let (r, f) = s.metrics.recovery_counts(ell_min);
        rated += r;
        recaptured += f;
    }
    Aggregate {
        runs: runs.len(),
        failed: runs.len() - ok.len(),
        e_hat_max: collect(&|s| s.metrics.e_hat_max),
        e_s_max: collect(&|s| s.metrics.e_s_max),
        radius1_median: collect(&|s| s.metrics.radius1_median),
        radius2_median: collect(&|s| s.metrics.radius2_median),
        antipodality_median: collect(&|s| s.metrics.antipodality_median),
        impulses_rated: rated,
        impulses_recaptured: recaptured,
        estimator_residual_max: max_of(&|s| s.estimator_residual.max_residual),
        as_residual_max: max_of(&|s| s.as_residual.max_residual),
        propagation_residual_max: max_of(&|s| s.propagation_residual),
    }
}

fn one(cfg: &ScenarioConfig, seed: u64, traces: Option<&TraceOutput>) -> (SeedRun, Option<f64>) {
    let cfg = cfg.clone().with_seed(seed);
    let result = run_once(&cfg).and_then(|(trace, mut summary)| {
        if let Some(out) = traces {
            let ext = match out.format {
                TraceFormat::Csv => "csv",
                TraceFormat::Jsonl => "jsonl",
            };
            write_trace_file(
                &trace,
                out.format,
                &out.dir.join(format!("seed-{seed}.{ext}")),
            )?;
        }
        let wall = summary.wall_time_ms.take();
        Ok((summary, wall))
    });
    match result {
        Ok((summary, wall)) => (
            SeedRun {
                seed,
                summary: Some(summary),
                error: None,
            },
            wall,
        ),
        Err(e) => {
            log::warn!("seed {seed} failed: {e:#}");
            (
                SeedRun {
                    seed,
                    summary: None,
                    error: Some(format!("{e:#}")),
                },
                None,
            )
        }
    }
}

/// Runs `cfg` once per seed, in parallel on `jobs` threads (all cores when
/// `None`). Results keep the order of `seeds`.
pub fn run_batch(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    jobs: Option<usize>,
    traces: Option<&TraceOutput>,
) -> Result<BatchReport> {
    if let Some(out) = traces {
        std::fs::create_dir_all(&out.dir)
            .with_context(|| format!("creating {}", out.dir.display()))?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker pool")?;
    let results: Vec<(SeedRun, Option<f64>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| one(cfg, seed, traces))
            .collect()
    });
    let (runs, wall_time_ms): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(BatchReport {
        config_digest: cfg.digest(),
        aggregate: aggregate(&runs, cfg.target.ell_min),
        runs,
        wall_time_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use encircle_core::paper_scenario;

    #[test]
    fn single_seed_aggregate_equals_the_run() {
        let report = run_batch(&paper_scenario(), &[5], Some(1), None).unwrap();
        let s = report.runs[0].summary.as_ref().unwrap();
        let agg = &report.aggregate;
        assert_eq!(agg.runs, 1);
        assert_eq!(agg.e_hat_max.unwrap().median, s.metrics.e_hat_max.unwrap());
        assert_eq!(agg.e_s_max.unwrap().max, s.metrics.e_s_max.unwrap());
        assert_eq!(agg.propagation_residual_max, Some(s.propagation_residual));
    }

    #[test]
    fn duplicate_seeds_give_identical_rows() {
        let report = run_batch(&paper_scenario(), &[3, 4, 3], Some(2), None).unwrap();
        assert_eq!(report.runs[0], report.runs[2]);
        assert_ne!(report.runs[0], report.runs[1]);
        assert!(!report.any_failed());
    }
}
