//! Machine-readable run summary.

use serde::Serialize;

use crate::analysis::{
    encirclement_metrics, evaluate_gates, excitation_report, propagation_identity_residual,
    theoretical_bounds, verify_as_recursion, verify_estimator_recursion, AnalysisError,
    EncirclementMetrics, GateReport, MetricsOptions, RecursionResidual, TheoreticalBounds,
};
use crate::estimator::{ExcitationBounds, InformationBoundCheck};
use crate::sim::Trace;

/// Residual above which a noiseless run fails verification.
pub const HARD_RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema: u32,
    pub config_digest: String,
    pub seed: u64,
    pub steps: usize,
    pub impulses: usize,
    pub gates: GateReport,
    pub metrics: EncirclementMetrics,
    pub estimator_residual: RecursionResidual,
    pub as_residual: RecursionResidual,
    pub propagation_residual: f64,
    /// `None` when the trace is shorter than one period.
    pub excitation: Option<ExcitationBounds>,
    pub information_bounds: Option<InformationBoundCheck>,
    pub bounds: Option<TheoreticalBounds>,
    /// Filled in by the caller; excluded from reproducibility comparisons.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl RunSummary {
    pub fn noiseless(&self, trace: &Trace) -> bool {
        trace.config.run.range_noise_std == 0.0
    }

    /// Hard failures: the gain condition, or identity residuals above
    /// [`HARD_RESIDUAL_LIMIT`] on a noiseless run.
    pub fn hard_failures(&self, noiseless: bool) -> Vec<String> {
        let mut out = Vec::new();
        if self.gates.hard_failure() {
            out.push(format!(
                "gain condition 0 < |1 + alpha| < 1 fails: {}",
                self.gates.gain_condition.value
            ));
        }
        if noiseless {
            for (name, r) in [
                ("estimator recursion", self.estimator_residual.max_residual),
                (
                    "anti-synchronization recursion",
                    self.as_residual.max_residual,
                ),
                ("propagation identity", self.propagation_residual),
            ] {
                if r > HARD_RESIDUAL_LIMIT {
                    out.push(format!(
                        "{name} residual {r:e} exceeds {HARD_RESIDUAL_LIMIT:e}"
                    ));
                }
            }
        }
        out
    }
}

/// Runs every analysis over a completed trace.
pub fn summarize(trace: &Trace) -> Result<RunSummary, AnalysisError> {
    let cfg = &trace.config;
    let window = cfg.controller.period_steps as usize;
    let (excitation, information_bounds) = if trace.len() > window {
        let (b, c) = excitation_report(trace, window)?;
        (Some(b), Some(c))
    } else {
        (None, None)
    };
    let mut opts = MetricsOptions::for_config(cfg);
    opts.window = opts.window.min(trace.len());
    Ok(RunSummary {
        schema: crate::trace_io::SCHEMA_VERSION,
        config_digest: cfg.digest(),
        seed: cfg.run.seed,
        steps: trace.len(),
        impulses: trace.records.iter().filter(|r| r.impulse).count(),
        gates: evaluate_gates(cfg),
        metrics: encirclement_metrics(trace, opts)?,
        estimator_residual: verify_estimator_recursion(trace)?,
        as_residual: verify_as_recursion(trace),
        propagation_residual: propagation_identity_residual(trace),
        bounds: excitation.map(|e| theoretical_bounds(cfg, &e.b_check)),
        excitation,
        information_bounds,
        wall_time_ms: None,
    })
}
