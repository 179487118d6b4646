//! Batch least-squares oracles for the recursive estimator.

#![allow(dead_code)]

use encircle_core::estimator::{compute_varpi, tpe_update, EstimatorState};
use encircle_core::geometry::{Mat2, PlanarVector};
use encircle_core::plant::Measurements;
use encircle_core::scenario::EstimatorParams;
use encircle_core::sim::Trace;

/// Minimizer of `γ₁ᴺ‖s − ŝ₀‖²_{η₀⁻¹} + Σⱼ γ₁^{N−j} (ϖⱼ − pⱼᵀs)² / γ₂`,
/// solved from the normal equations with an explicit inverse.
pub fn weighted_batch_solution(
    params: &EstimatorParams,
    rows: &[(PlanarVector, f64)],
) -> PlanarVector {
    let n = rows.len() as i32;
    let (g1, g2) = (params.gamma1, params.gamma2);
    let prior_info = params.eta0.try_inverse().expect("prior is invertible");
    let mut info = g1.powi(n) * prior_info;
    let mut rhs = g1.powi(n) * (prior_info * params.s_hat0.to_na());
    for (j, (p, varpi)) in rows.iter().enumerate() {
        let w = g1.powi(n - 1 - j as i32) / g2;
        info += w * p.outer();
        rhs += w * varpi * p.to_na();
    }
    PlanarVector::from_na(info.try_inverse().expect("rows span the plane") * rhs)
}

/// Unregularized least-squares solution of the stacked system `pⱼᵀs = ϖⱼ`.
pub fn stacked_solution(rows: &[(PlanarVector, f64)]) -> PlanarVector {
    let info: Mat2 = rows.iter().map(|(p, _)| p.outer()).sum();
    let rhs = rows
        .iter()
        .fold(nalgebra::Vector2::zeros(), |acc, (p, varpi)| {
            acc + *varpi * p.to_na()
        });
    PlanarVector::from_na(info.try_inverse().expect("rows span the plane") * rhs)
}

/// Runs the recursive estimator over `rows` from its configured prior.
pub fn recursive_solution(
    params: &EstimatorParams,
    rows: &[(PlanarVector, f64)],
) -> EstimatorState {
    let mut state = EstimatorState::initial(params);
    for &(p, varpi) in rows {
        state = tpe_update(&state, varpi, p, params)
            .expect("update succeeds")
            .0;
    }
    state
}

/// Observation rows `(p₁₂(k), ϖ(k))` used by the estimator, `k ≥ 1`,
/// rebuilt from the recorded ranges.
pub fn observation_rows(trace: &Trace) -> Vec<(PlanarVector, f64)> {
    trace
        .records
        .iter()
        .skip(1)
        .map(|r| {
            let m = Measurements {
                d12: r.d12,
                d1s: r.d1s,
                d2s: r.d2s,
                p12: r.x1 - r.x2,
                psi1: PlanarVector::ZERO,
                psi2: PlanarVector::ZERO,
            };
            (r.x1 - r.x2, compute_varpi(&m, r.x1, r.x2))
        })
        .collect()
}
