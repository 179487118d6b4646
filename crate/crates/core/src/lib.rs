//! Two-agent encirclement of an impulsively escaping target from range-only
//! measurements.
//!
//! Two agents measure their distances to a non-cooperative target. The
//! difference of the squared ranges gives one linear observation of the target
//! position per step, which a forgetting-factor recursive least-squares
//! estimator turns into a position estimate ([`estimator`]). A distributed
//! anti-synchronization controller then drives the agents onto antipodal
//! points of a circle around that estimate ([`controller`]). The target
//! drifts slowly and occasionally jumps ([`plant`]).
//!
//! ```
//! use encircle_core::{paper_scenario, run_scenario, summarize};
//!
//! let trace = run_scenario(&paper_scenario().with_seed(7)).unwrap();
//! let summary = summarize(&trace).unwrap();
//! assert!(summary.estimator_residual.max_residual < 1e-9);
//! ```

pub mod analysis;
pub mod controller;
pub mod estimator;
pub mod geometry;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod summary;
pub mod trace_io;

pub use analysis::{
    encirclement_metrics, error_sample, evaluate_gates, theoretical_bounds, verify_as_recursion,
    verify_estimator_recursion, EncirclementMetrics, GateCheck, GateReport, MetricsOptions,
    Verdict,
};
pub use controller::{dasc, zeta, CirclingTrajectory, ControlOutput};
pub use estimator::{compute_varpi, tpe_update, EstimatorState, ExcitationBounds, GainRecord};
pub use geometry::{Mat2, PlanarVector};
pub use plant::{AgentState, Measurements, TargetState};
pub use scenario::{
    load_scenario, load_scenario_file, paper_scenario, ScenarioConfig, ScenarioError,
};
pub use sim::{run_scenario, Simulation, StepRecord, TargetInput, Tick, Trace};
pub use summary::{summarize, RunSummary};
pub use trace_io::{read_trace, write_trace, TraceError, TraceFormat};
