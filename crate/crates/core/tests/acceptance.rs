//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use common::{observation_rows, recursive_solution, stacked_solution, weighted_batch_solution};
use encircle_core::analysis::{
    encirclement_metrics, evaluate_gates, excitation_report, median, propagation_identity_residual,
    verify_as_recursion, verify_estimator_recursion, MetricsOptions, Verdict,
};
use encircle_core::geometry::{Mat2, PlanarVector};
use encircle_core::scenario::{paper_scenario, ScenarioConfig};
use encircle_core::sim::{run_scenario, Trace};
use encircle_core::trace_io::{write_trace, TraceFormat};

const SEEDS: std::ops::Range<u64> = 0..20;
const IDENTITY_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference_runs() -> Vec<(u64, Trace, f64)> {
    SEEDS
        .map(|seed| {
            let cfg = paper_scenario().with_seed(seed);
            let start = Instant::now();
            let trace = run_scenario(&cfg).expect("reference scenario runs");
            (seed, trace, start.elapsed().as_secs_f64())
        })
        .collect()
}

fn reproduction(runs: &[(u64, Trace, f64)]) -> Outcome {
    let mut e_hat = Vec::new();
    let mut e_s = Vec::new();
    let mut slowest = 0.0_f64;
    for (_, trace, secs) in runs {
        let m = encirclement_metrics(trace, MetricsOptions::for_config(&trace.config)).unwrap();
        e_hat.push(m.e_hat_max.unwrap());
        e_s.push(m.e_s_max.unwrap());
        slowest = slowest.max(*secs);
    }
    let e_hat = median(&mut e_hat).unwrap();
    let e_s = median(&mut e_s).unwrap();
    outcome(
        e_hat <= 0.15 && e_s <= 0.45 && slowest < 1.0,
        format!(
            "{} seeds: median max |e_hat| = {e_hat:.4} (<= 0.15), median max |e_s| = {e_s:.4} (<= 0.45), slowest run {:.1} ms (< 1000)",
            runs.len(),
            slowest * 1e3
        ),
    )
}

fn recapture(runs: &[(u64, Trace, f64)]) -> Outcome {
    let (mut rated, mut fast) = (0, 0);
    for (_, trace, _) in runs {
        let limit = trace.config.target.ell_min;
        let m = encirclement_metrics(trace, MetricsOptions::for_config(&trace.config)).unwrap();
        let (r, f) = m.recovery_counts(limit);
        rated += r;
        fast += f;
    }
    let share = fast as f64 / rated.max(1) as f64;
    outcome(
        rated > 0 && share >= 0.9,
        format!(
            "{fast}/{rated} rated impulses recaptured within ell_min steps ({:.1}%, >= 90%)",
            100.0 * share
        ),
    )
}

fn geometry(runs: &[(u64, Trace, f64)]) -> Outcome {
    let mut bad = Vec::new();
    let (mut worst_r, mut worst_anti) = (0.0_f64, PI);
    for (seed, trace, _) in runs {
        let options = MetricsOptions {
            window: 100,
            exclusion: trace.config.target.ell_min,
            band_lookback: 10,
        };
        let m = encirclement_metrics(trace, options).unwrap();
        let (r1, r2, anti) = (
            m.radius1_median.unwrap_or(f64::NAN),
            m.radius2_median.unwrap_or(f64::NAN),
            m.antipodality_median.unwrap_or(f64::NAN),
        );
        worst_r = worst_r.max((r1 - 2.0).abs()).max((r2 - 2.0).abs());
        worst_anti = worst_anti.min(anti);
        let ok = (1.5..=2.5).contains(&r1)
            && (1.5..=2.5).contains(&r2)
            && (PI - 0.3..=PI).contains(&anti);
        if !ok {
            bad.push(*seed);
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "final 100 steps, every seed: worst |median radius - 2| = {worst_r:.3} (<= 0.5), smallest median antipodality = {worst_anti:.3} rad (>= {:.3}); failing seeds {bad:?}",
            PI - 0.3
        ),
    )
}

fn oracle() -> Outcome {
    // scripted directions, no forgetting
    let mut params = paper_scenario().estimator;
    params.gamma1 = 1.0;
    params.gamma2 = 1.0;
    let s = PlanarVector::new(3.0, -1.5);
    let rows: Vec<_> = (0..12)
        .map(|j| {
            let a = 0.7 * j as f64 + 0.3;
            let p = PlanarVector::new(a.cos(), a.sin());
            (p, p.dot(s))
        })
        .collect();
    let scripted =
        (recursive_solution(&params, &rows).s_hat - weighted_batch_solution(&params, &rows)).norm();

    // closed loop around a stationary target, flat prior
    let mut cfg = paper_scenario();
    cfg.estimator.gamma1 = 1.0;
    cfg.estimator.gamma2 = 1.0;
    cfg.estimator.eta0 = 1e8 * Mat2::identity();
    cfg.target.drift_amp = 0.0;
    cfg.target.theta_max = 0.0;
    cfg.init.s = PlanarVector::new(0.8, -0.6);
    cfg.run.steps = 120;
    let trace = run_scenario(&cfg).unwrap();
    let closed =
        (trace.records.last().unwrap().s_hat - stacked_solution(&observation_rows(&trace))).norm();

    outcome(
        scripted <= 1e-6 && closed <= 1e-6,
        format!(
            "scripted rows: {scripted:.2e}, closed loop ({} rows): {closed:.2e} (<= 1e-6)",
            trace.len() - 1
        ),
    )
}

fn identities(runs: &[(u64, Trace, f64)]) -> Outcome {
    let (mut prop, mut est, mut as_) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut over = Vec::new();
    for (seed, trace, _) in runs {
        let p = propagation_identity_residual(trace);
        if p > IDENTITY_TOL {
            over.push((*seed, p));
        }
        prop = prop.max(p);
        est = est.max(verify_estimator_recursion(trace).unwrap().max_residual);
        as_ = as_.max(verify_as_recursion(trace).max_residual);
    }
    let over: Vec<String> = over
        .iter()
        .map(|(s, p)| format!("seed {s}: {p:.1e}"))
        .collect();
    outcome(
        prop <= IDENTITY_TOL && est <= IDENTITY_TOL && as_ <= IDENTITY_TOL,
        format!(
            "max |A - g1*eta(k+1)*eta_inv(k)| = {prop:.2e}, estimator recursion {est:.2e}, AS recursion {as_:.2e} (all <= 1e-9); propagation over tolerance: [{}]",
            over.join(", ")
        ),
    )
}

fn information_bounds(runs: &[(u64, Trace, f64)]) -> Outcome {
    let (mut checked, mut violations, mut exciting) = (0, 0, 0);
    let (mut lower, mut upper) = (f64::INFINITY, f64::INFINITY);
    for (_, trace, _) in runs {
        let n = trace.config.controller.period_steps as usize;
        let (bounds, check) = excitation_report(trace, n).unwrap();
        if bounds.persistently_exciting() {
            exciting += 1;
        }
        checked += check.checked;
        violations += check.lower_violations + check.upper_violations;
        lower = lower.min(check.min_lower_margin);
        upper = upper.min(check.min_upper_margin);
    }
    outcome(
        violations == 0 && exciting == runs.len(),
        format!(
            "{exciting}/{} runs persistently exciting, {checked} steps checked, {violations} violations; min lower margin {lower:.3e}, min upper margin {upper:.3e}",
            runs.len()
        ),
    )
}

fn gates() -> Outcome {
    let g = evaluate_gates(&paper_scenario());
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let pass = g.theorem1.verdict == Verdict::Pass
        && close(g.theorem1.value, 0.6)
        && g.gain_condition.verdict == Verdict::Pass
        && close(g.gain_condition.value, 0.15)
        && g.theorem2_literal.verdict == Verdict::Warn
        && close(g.theorem2_literal.value, 1.35)
        && g.theorem2_ell_free.verdict == Verdict::Pass
        && close(g.theorem2_ell_free.value, 0.0675);
    outcome(
        pass,
        format!(
            "theorem1 {:?} ({:.4}), gain condition {:?} ({:.4}), theorem2 literal {:?} ({:.4}), theorem2 ell-free {:?} ({:.4})",
            g.theorem1.verdict,
            g.theorem1.value,
            g.gain_condition.verdict,
            g.gain_condition.value,
            g.theorem2_literal.verdict,
            g.theorem2_literal.value,
            g.theorem2_ell_free.verdict,
            g.theorem2_ell_free.value
        ),
    )
}

fn determinism() -> Outcome {
    let bytes = |cfg: &ScenarioConfig, format| {
        let mut buf = Vec::new();
        write_trace(&run_scenario(cfg).unwrap(), format, &mut buf).unwrap();
        buf
    };
    let mut identical = 0;
    let mut total = 0;
    for seed in [0, 7, 19] {
        let cfg = paper_scenario().with_seed(seed);
        for format in [TraceFormat::Csv, TraceFormat::Jsonl] {
            total += 1;
            if bytes(&cfg, format) == bytes(&cfg, format) {
                identical += 1;
            }
        }
    }
    let differs = bytes(&paper_scenario().with_seed(1), TraceFormat::Csv)
        != bytes(&paper_scenario().with_seed(2), TraceFormat::Csv);
    outcome(
        identical == total && differs,
        format!("{identical}/{total} repeated runs byte-identical; distinct seeds differ: {differs}; built from the core crate alone"),
    )
}

fn main() -> ExitCode {
    let runs = reference_runs();
    let results = [
        ("1 reference-scenario reproduction", reproduction(&runs)),
        ("2 escape-recapture", recapture(&runs)),
        ("3 encirclement geometry", geometry(&runs)),
        ("4 estimator oracle equivalence", oracle()),
        ("5 identity suite", identities(&runs)),
        ("6 information-matrix bounds", information_bounds(&runs)),
        ("7 gate arithmetic", gates()),
        ("8 determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
