//! Error metrics, parameter gates, convergence constants and checks of the
//! closed-loop error recursions against recorded traces.
//!
//! Sign convention: the estimation error is `ê = s − ŝ`. With it the
//! recursions read
//!
//! ```text
//! ê(k+1)   = A(k) (ê(k) + h(k))
//! e_s(k+1) = (1 + α) e_s(k) + 2α ê(k) − 2 h(k)
//! ```
//!
//! where `h(k)` is the full target displacement (drift plus any impulse) and
//! `A(k) = I − K(k+1) p₁₂ᵀ(k+1)`.

use serde::Serialize;

use crate::estimator::{
    check_information_bounds, excitation_bounds, EstimatorError, ExcitationBounds,
    InformationBoundCheck,
};
use crate::geometry::{quad_form, sym_eigenvalues, Mat2, PlanarVector};
use crate::scenario::ScenarioConfig;
use crate::sim::{StepRecord, Trace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("metrics window of {window} steps exceeds trace length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("trace step {k} lacks estimator diagnostics")]
    MissingDiagnostics { k: u64 },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSample {
    pub k: u64,
    /// `s − ŝ`.
    pub e_hat: PlanarVector,
    /// `x₁ + x₂ − 2s`.
    pub e_s: PlanarVector,
    pub e_hat_norm: f64,
    pub e_s_norm: f64,
    /// `êᵀ η⁻¹ ê`.
    pub v1: f64,
    /// `e_sᵀ e_s`.
    pub v2: f64,
}

pub fn error_sample(record: &StepRecord, eta_inv: &Mat2) -> ErrorSample {
    let e_hat = record.s - record.s_hat;
    let e_s = record.x1 + record.x2 - 2.0 * record.s;
    ErrorSample {
        k: record.k,
        e_hat,
        e_s,
        e_hat_norm: e_hat.norm(),
        e_s_norm: e_s.norm(),
        v1: quad_form(eta_inv, e_hat),
        v2: e_s.norm_squared(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

/// One gate: verdict, the computed left-hand side and the bound it is held to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateCheck {
    pub verdict: Verdict,
    pub value: f64,
    pub bound: f64,
}

impl GateCheck {
    fn new(ok: bool, value: f64, bound: f64) -> Self {
        Self {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            value,
            bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateReport {
    /// `0 < |1 + α| < 1`.
    pub gain_condition: GateCheck,
    /// `0 < 2γ₁ ≤ 2/3`.
    pub theorem1: GateCheck,
    /// `0 < 3(1 + α)² ℓ ≤ 3/4`; a failure is downgraded to a warning when the
    /// ℓ-free form passes.
    pub theorem2_literal: GateCheck,
    /// `0 < 3(1 + α)² ≤ 3/4`.
    pub theorem2_ell_free: GateCheck,
    /// Smallest eigenvalue of the one-period excitation sum of the nominal
    /// steady-state baseline `−2ζ(k)`; must be positive.
    pub pe_window: GateCheck,
}

impl GateReport {
    /// Only the gain condition is enforced.
    pub fn hard_failure(&self) -> bool {
        self.gain_condition.verdict == Verdict::Fail
    }
}

pub fn evaluate_gates(cfg: &ScenarioConfig) -> GateReport {
    let alpha = cfg.controller.alpha;
    let g1 = cfg.estimator.gamma1;
    let ell = cfg.target.ell_min as f64;

    let contraction = (1.0 + alpha).abs();
    let gain_condition = GateCheck::new(contraction > 0.0 && contraction < 1.0, contraction, 1.0);

    let two_g1 = 2.0 * g1;
    let theorem1 = GateCheck::new(two_g1 > 0.0 && two_g1 <= 2.0 / 3.0, two_g1, 2.0 / 3.0);

    let base = 3.0 * (1.0 + alpha).powi(2);
    let theorem2_ell_free = GateCheck::new(base > 0.0 && base <= 0.75, base, 0.75);
    let literal = base * ell;
    let mut theorem2_literal = GateCheck::new(literal > 0.0 && literal <= 0.75, literal, 0.75);
    if theorem2_literal.verdict == Verdict::Fail && theorem2_ell_free.verdict == Verdict::Pass {
        theorem2_literal.verdict = Verdict::Warn;
    }

    let traj = crate::controller::CirclingTrajectory::from_params(&cfg.controller);
    let period_sum: Mat2 = (0..cfg.controller.period_steps)
        .map(|k| (-2.0 * crate::controller::zeta(&traj, k)).outer())
        .sum();
    let (lo, _) = sym_eigenvalues(&period_sum);
    let pe_window = GateCheck::new(lo > 0.0, lo, 0.0);

    GateReport {
        gain_condition,
        theorem1,
        theorem2_literal,
        theorem2_ell_free,
        pe_window,
    }
}

/// Largest deviation between a recursion's prediction and the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursionResidual {
    pub max_residual: f64,
    pub checked: usize,
    /// Steps skipped because a precondition did not hold (saturation).
    pub excluded: usize,
}

/// Checks `ê(k+1) = A(k)(ê(k) + h(k))` at every step.
pub fn verify_estimator_recursion(trace: &Trace) -> Result<RecursionResidual, AnalysisError> {
    let mut out = RecursionResidual {
        max_residual: 0.0,
        checked: 0,
        excluded: 0,
    };
    for pair in trace
        .records
        .windows(2)
        .zip(trace.diagnostics.iter().skip(1))
    {
        let ([prev, next], diag) = (pair.0, pair.1) else {
            unreachable!()
        };
        let gain = diag
            .gain
            .ok_or(AnalysisError::MissingDiagnostics { k: next.k })?;
        let e_prev = prev.s - prev.s_hat;
        let predicted = gain.a * (e_prev + prev.h);
        let actual = next.s - next.s_hat;
        out.max_residual = out.max_residual.max((predicted - actual).norm());
        out.checked += 1;
    }
    Ok(out)
}

/// Checks `e_s(k+1) = (1+α)e_s(k) + 2αê(k) − 2h(k)` on steps where neither
/// control saturated.
pub fn verify_as_recursion(trace: &Trace) -> RecursionResidual {
    let alpha = trace.config.controller.alpha;
    let mut out = RecursionResidual {
        max_residual: 0.0,
        checked: 0,
        excluded: 0,
    };
    for w in trace.records.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        if prev.saturated1 || prev.saturated2 {
            out.excluded += 1;
            continue;
        }
        let e_s = prev.x1 + prev.x2 - 2.0 * prev.s;
        let e_hat = prev.s - prev.s_hat;
        let predicted = (1.0 + alpha) * e_s + 2.0 * alpha * e_hat - 2.0 * prev.h;
        let actual = next.x1 + next.x2 - 2.0 * next.s;
        out.max_residual = out.max_residual.max((predicted - actual).norm());
        out.checked += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoreticalBounds {
    /// Drift bound ν̄.
    pub nu_bar: f64,
    /// Euclidean impulse bound θ̄.
    pub theta_bar: f64,
    /// Control-difference bound μ̄; `None` when the gain condition fails.
    pub mu_bar: Option<f64>,
    /// `2γ₁ν̄²‖b̌‖`.
    pub rho1: f64,
    /// `3γ₁(ν̄² + θ̄²)‖b̌‖`.
    pub rho2: f64,
    /// `12ν̄²`.
    pub sigma1: f64,
    /// `16(ν̄² + θ̄²)`.
    pub sigma2: f64,
}

/// Convergence constants. `b_check` enters through its largest eigenvalue.
pub fn theoretical_bounds(cfg: &ScenarioConfig, b_check: &Mat2) -> TheoreticalBounds {
    let nu_bar = cfg.target.drift_amp;
    let theta_bar = cfg.target.theta_max * std::f64::consts::SQRT_2;
    let g1 = cfg.estimator.gamma1;
    let b = sym_eigenvalues(b_check).1;
    let nu2 = nu_bar * nu_bar;
    let th2 = theta_bar * theta_bar;
    let d12_0 = (cfg.init.x1 - cfg.init.x2).norm();
    // nothing to bound when there is no disturbance
    let scaled = |c: f64| if c == 0.0 { 0.0 } else { c * b };
    TheoreticalBounds {
        nu_bar,
        theta_bar,
        mu_bar: crate::controller::control_delta_bound(&cfg.controller, d12_0).ok(),
        rho1: scaled(2.0 * g1 * nu2),
        rho2: scaled(3.0 * g1 * (nu2 + th2)),
        sigma1: 12.0 * nu2,
        sigma2: 16.0 * (nu2 + th2),
    }
}

/// Options for [`encirclement_metrics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsOptions {
    /// Trailing steps to summarize.
    pub window: usize,
    /// Steps after each impulse left out of steady-state statistics.
    pub exclusion: u64,
    /// Steps before an impulse that define its pre-impulse error band.
    pub band_lookback: u64,
}

impl MetricsOptions {
    /// Last two thirds of the run, exclusion of `ell_min` steps, 10-step band.
    pub fn for_config(cfg: &ScenarioConfig) -> Self {
        let steps = cfg.run.steps as usize;
        Self {
            window: steps - steps / 3,
            exclusion: cfg.target.ell_min,
            band_lookback: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryStatus {
    Recovered,
    /// The next impulse arrived first.
    NotRecovered,
    /// The trace ended first.
    Censored,
    /// Not enough history before the impulse to define a band.
    Unrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpulseRecovery {
    /// Step whose displacement carried the impulse.
    pub k: u64,
    /// Largest `‖ê‖` over the lookback steps ending at `k`.
    pub band: Option<f64>,
    pub status: RecoveryStatus,
    /// Steps after `k` until `‖ê‖ ≤ band`.
    pub recovery_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncirclementMetrics {
    pub options: MetricsOptions,
    pub included_steps: usize,
    pub e_hat_max: Option<f64>,
    pub e_hat_median: Option<f64>,
    pub e_s_max: Option<f64>,
    pub e_s_median: Option<f64>,
    /// Median `‖x₁ − s‖`.
    pub radius1_median: Option<f64>,
    /// Median `‖x₂ − s‖`.
    pub radius2_median: Option<f64>,
    /// Median of `|‖xᵢ − s‖ − r|` pooled over both agents.
    pub radius_error_median: Option<f64>,
    /// Median angle between `x₁ − s` and `x₂ − s`; π is perfect.
    pub antipodality_median: Option<f64>,
    pub recoveries: Vec<ImpulseRecovery>,
}

impl EncirclementMetrics {
    /// Rated impulses (recovered, not recovered) and how many recovered
    /// within `limit` steps.
    pub fn recovery_counts(&self, limit: u64) -> (usize, usize) {
        let rated = self
            .recoveries
            .iter()
            .filter(|r| {
                matches!(
                    r.status,
                    RecoveryStatus::Recovered | RecoveryStatus::NotRecovered
                )
            })
            .count();
        let fast = self
            .recoveries
            .iter()
            .filter(|r| r.recovery_steps.is_some_and(|s| s <= limit))
            .count();
        (rated, fast)
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn max_of(values: &[f64]) -> Option<f64> {
    values.iter().copied().reduce(f64::max)
}

/// Steady-state and geometry statistics over the trailing window, plus
/// per-impulse recovery times over the whole trace.
pub fn encirclement_metrics(
    trace: &Trace,
    options: MetricsOptions,
) -> Result<EncirclementMetrics, AnalysisError> {
    let len = trace.records.len();
    if options.window > len {
        return Err(AnalysisError::WindowTooLong {
            window: options.window,
            len,
        });
    }
    let impulses: Vec<u64> = trace
        .records
        .iter()
        .filter(|r| r.impulse)
        .map(|r| r.k)
        .collect();
    let excluded = |k: u64| {
        impulses
            .iter()
            .any(|&m| k > m && k <= m + options.exclusion)
    };

    let r = trace.config.controller.radius;
    let (mut e_hat, mut e_s, mut r1, mut r2, mut r_err, mut anti) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    for rec in &trace.records[len - options.window..] {
        if excluded(rec.k) {
            continue;
        }
        let p1s = rec.x1 - rec.s;
        let p2s = rec.x2 - rec.s;
        e_hat.push(rec.e_hat_norm);
        e_s.push(rec.e_s_norm);
        r1.push(p1s.norm());
        r2.push(p2s.norm());
        r_err.push((p1s.norm() - r).abs());
        r_err.push((p2s.norm() - r).abs());
        anti.push(p1s.angle_to(p2s));
    }

    let recoveries = impulses
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let next_impulse = impulses.get(i + 1).copied();
            impulse_recovery(&trace.records, m, next_impulse, options.band_lookback)
        })
        .collect();

    Ok(EncirclementMetrics {
        options,
        included_steps: e_hat.len(),
        e_hat_max: max_of(&e_hat),
        e_hat_median: median(&mut e_hat),
        e_s_max: max_of(&e_s),
        e_s_median: median(&mut e_s),
        radius1_median: median(&mut r1),
        radius2_median: median(&mut r2),
        radius_error_median: median(&mut r_err),
        antipodality_median: median(&mut anti),
        recoveries,
    })
}

fn impulse_recovery(
    records: &[StepRecord],
    m: u64,
    next_impulse: Option<u64>,
    lookback: u64,
) -> ImpulseRecovery {
    let unrated = ImpulseRecovery {
        k: m,
        band: None,
        status: RecoveryStatus::Unrated,
        recovery_steps: None,
    };
    if lookback == 0 || m + 1 < lookback {
        return unrated;
    }
    let start = (m + 1 - lookback) as usize;
    // an earlier impulse inside the lookback makes the band meaningless
    if records[start..m as usize].iter().any(|r| r.impulse) {
        return unrated;
    }
    let band = records[start..=m as usize]
        .iter()
        .map(|r| r.e_hat_norm)
        .fold(0.0_f64, f64::max);
    let horizon = next_impulse.map_or(records.len() as u64, |n| n + 1);
    let found = ((m + 1)..horizon.min(records.len() as u64))
        .find(|&j| records[j as usize].e_hat_norm <= band);
    let (status, recovery_steps) = match found {
        Some(j) => (RecoveryStatus::Recovered, Some(j - m)),
        None if next_impulse.is_some() => (RecoveryStatus::NotRecovered, None),
        None => (RecoveryStatus::Censored, None),
    };
    ImpulseRecovery {
        k: m,
        band: Some(band),
        status,
        recovery_steps,
    }
}

/// Excitation levels of the recorded baselines and the check of the
/// information-matrix bounds they imply, using the updates `k ≥ 1`.
pub fn excitation_report(
    trace: &Trace,
    window: usize,
) -> Result<(ExcitationBounds, InformationBoundCheck), AnalysisError> {
    let baselines = trace.baselines();
    let history = trace.information_history();
    let p12 = baselines.get(1..).unwrap_or_default();
    let bounds = excitation_bounds(p12, &history, window, &trace.config.estimator)?;
    let check = check_information_bounds(&history, &bounds);
    Ok((bounds, check))
}

/// Largest `‖A(k) − γ₁ η(k+1) η⁻¹(k)‖_max` over the trace.
pub fn propagation_identity_residual(trace: &Trace) -> f64 {
    let g1 = trace.config.estimator.gamma1;
    trace
        .diagnostics
        .windows(2)
        .filter_map(|w| {
            let gain = w[1].gain?;
            let rhs = g1 * w[1].eta * w[0].eta_inv;
            Some(crate::geometry::max_abs_diff(&gain.a, &rhs))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::paper_scenario;
    use crate::sim::run_scenario;

    fn record(
        x1: PlanarVector,
        x2: PlanarVector,
        s: PlanarVector,
        s_hat: PlanarVector,
    ) -> StepRecord {
        StepRecord {
            k: 0,
            x1,
            x2,
            s,
            s_hat,
            u1: PlanarVector::ZERO,
            u2: PlanarVector::ZERO,
            d12: (x1 - x2).norm(),
            d1s: (x1 - s).norm(),
            d2s: (x2 - s).norm(),
            h: PlanarVector::ZERO,
            e_hat_norm: (s - s_hat).norm(),
            e_s_norm: (x1 + x2 - 2.0 * s).norm(),
            impulse: false,
            saturated1: false,
            saturated2: false,
        }
    }

    #[test]
    fn error_sample_examples() {
        let s = PlanarVector::new(1.0, -2.0);
        let e = error_sample(
            &record(PlanarVector::new(0.0, 1.0), PlanarVector::ZERO, s, s),
            &Mat2::identity(),
        );
        assert_eq!(e.e_hat, PlanarVector::ZERO);
        assert_eq!(e.v1, 0.0);

        let e = error_sample(
            &record(
                PlanarVector::new(0.0, 1.2),
                PlanarVector::new(0.0, 2.4),
                PlanarVector::ZERO,
                PlanarVector::ZERO,
            ),
            &Mat2::identity(),
        );
        assert!((e.e_s - PlanarVector::new(0.0, 3.6)).norm() < 1e-15);
        assert!((e.v2 - 12.96).abs() < 1e-12);
        assert_eq!(e.v2, e.e_s_norm * e.e_s_norm);

        let e = error_sample(
            &record(
                PlanarVector::new(1.0, 0.0),
                PlanarVector::ZERO,
                PlanarVector::new(1.0, 1.0),
                PlanarVector::ZERO,
            ),
            &Mat2::new(2.0, 0.0, 0.0, 1.0),
        );
        assert_eq!(e.v1, 3.0);
    }

    #[test]
    fn gates_on_reference_parameters() {
        let g = evaluate_gates(&paper_scenario());
        assert_eq!(g.theorem1.verdict, Verdict::Pass);
        assert!((g.theorem1.value - 0.6).abs() < 1e-15);
        assert_eq!(g.gain_condition.verdict, Verdict::Pass);
        assert!((g.gain_condition.value - 0.15).abs() < 1e-12);
        assert_eq!(g.theorem2_literal.verdict, Verdict::Warn);
        assert!((g.theorem2_literal.value - 1.35).abs() < 1e-12);
        assert_eq!(g.theorem2_ell_free.verdict, Verdict::Pass);
        assert!((g.theorem2_ell_free.value - 0.0675).abs() < 1e-12);
        assert_eq!(g.pe_window.verdict, Verdict::Pass);
        assert!(!g.hard_failure());
    }

    #[test]
    fn gates_fail_just_over_bounds() {
        let mut cfg = paper_scenario();
        cfg.estimator.gamma1 = 0.4;
        cfg.controller.alpha = -2.5;
        let g = evaluate_gates(&cfg);
        assert_eq!(g.theorem1.verdict, Verdict::Fail);
        assert_eq!(g.gain_condition.verdict, Verdict::Fail);
        assert_eq!(g.theorem2_literal.verdict, Verdict::Fail);
        assert!(g.hard_failure());
    }

    #[test]
    fn constants_examples() {
        let cfg = paper_scenario();
        let b = theoretical_bounds(&cfg, &Mat2::identity());
        assert!((b.sigma1 - 0.0048).abs() < 1e-15);
        assert!((b.theta_bar - 1.5 * 2f64.sqrt()).abs() < 1e-15);
        assert!((b.sigma2 - 72.0064).abs() < 1e-9);
        assert!((b.mu_bar.unwrap() - 4.42).abs() < 1e-12);
        assert!((b.rho1 - 2.0 * 0.3 * 0.0004).abs() < 1e-15);

        let mut still = cfg;
        still.target.drift_amp = 0.0;
        still.target.theta_max = 0.0;
        let b = theoretical_bounds(&still, &Mat2::identity());
        assert_eq!((b.rho1, b.rho2, b.sigma1, b.sigma2), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn perfect_anti_synchronization_geometry() {
        let mut cfg = paper_scenario();
        cfg.run.steps = 48;
        let traj = crate::controller::CirclingTrajectory::from_params(&cfg.controller);
        let s = PlanarVector::new(0.5, -0.25);
        let records: Vec<StepRecord> = (0..48)
            .map(|k| {
                let z = crate::controller::zeta(&traj, k);
                let mut r = record(s - z, s + z, s, s);
                r.k = k;
                r
            })
            .collect();
        let trace = Trace {
            config: cfg,
            diagnostics: vec![],
            records,
        };
        let opts = MetricsOptions {
            window: 48,
            exclusion: 20,
            band_lookback: 10,
        };
        let m = encirclement_metrics(&trace, opts).unwrap();
        assert!((m.antipodality_median.unwrap() - std::f64::consts::PI).abs() < 1e-12);
        assert!(m.radius_error_median.unwrap() < 1e-12);
        assert!(m.e_s_max.unwrap() < 1e-12);

        let too_long = MetricsOptions { window: 49, ..opts };
        assert!(matches!(
            encirclement_metrics(&trace, too_long),
            Err(AnalysisError::WindowTooLong {
                window: 49,
                len: 48
            })
        ));
    }

    #[test]
    fn recursions_hold_on_noiseless_run() {
        let t = run_scenario(&paper_scenario().with_seed(1)).unwrap();
        let est = verify_estimator_recursion(&t).unwrap();
        assert_eq!(est.checked, 299);
        assert!(est.max_residual <= 1e-9, "{est:?}");
        let as_ = verify_as_recursion(&t);
        assert!(as_.max_residual <= 1e-9, "{as_:?}");
        assert!(as_.excluded > 0);
        assert_eq!(as_.checked + as_.excluded, 299);
        assert!(propagation_identity_residual(&t) <= 1e-9);
    }

    #[test]
    fn range_noise_breaks_estimator_identity() {
        let mut cfg = paper_scenario().with_seed(1);
        cfg.run.range_noise_std = 0.01;
        let t = run_scenario(&cfg).unwrap();
        assert!(verify_estimator_recursion(&t).unwrap().max_residual > 1e-6);
    }

    #[test]
    fn stationary_equilibrium_residuals_vanish() {
        let mut cfg = paper_scenario();
        cfg.target.drift_amp = 0.0;
        cfg.target.theta_max = 0.0;
        cfg.controller.sat = f64::INFINITY;
        let s = cfg.init.s;
        let traj = crate::controller::CirclingTrajectory::from_params(&cfg.controller);
        let z = crate::controller::zeta(&traj, 0);
        cfg.init.x1 = s - z;
        cfg.init.x2 = s + z;
        cfg.run.steps = 60;
        let t = run_scenario(&cfg).unwrap();
        // zero up to the sqrt/square round trip in the ranges
        assert!(verify_estimator_recursion(&t).unwrap().max_residual < 1e-15);
        assert!(t.records.iter().all(|r| r.e_hat_norm < 1e-15));
        assert!(t.records.iter().all(|r| r.e_s_norm < 1e-12));
    }
}
