//! Range-only target position estimator.
//!
//! The squared ranges from both agents to the target differ by a term that is
//! linear in the target position, which gives one scalar observation
//! `ϖ = p₁₂ᵀ s` per step. Those observations feed a recursive least-squares
//! filter with exponential forgetting (γ₁) and an information weight (γ₂).
//!
//! Both the covariance η and the information matrix η⁻¹ are carried. η is only
//! ever advanced with the rank-1 (Sherman–Morrison) form; η⁻¹ is advanced
//! directly. Their product is checked against the identity every step.

use serde::Serialize;

use crate::geometry::{max_abs_diff, quad_form, sym_eigenvalues, symmetrize, Mat2, PlanarVector};
use crate::plant::Measurements;
use crate::scenario::EstimatorParams;

/// Tolerance on `‖η·η⁻¹ − I‖_max` for well-conditioned information matrices.
pub const INVERSE_TOL: f64 = 1e-9;

/// Round-off allowance per unit condition number. The attainable accuracy of
/// `η·η⁻¹` in f64 is about `ε·cond(η⁻¹)`, and the rank-1 update carries
/// rounding picked up while the information matrix was poorly conditioned
/// into later steps, so the allowance scales with the peak condition number
/// seen so far.
const CONDITION_SLACK: f64 = 1e3;

/// Condition number of a symmetric positive-definite matrix.
pub fn condition_number(m: &Mat2) -> f64 {
    let (lo, hi) = sym_eigenvalues(m);
    hi / lo
}

/// Largest acceptable `‖η·η⁻¹ − I‖_max` given the peak condition number of
/// the information matrix so far.
pub fn inverse_tolerance(peak_condition: f64) -> f64 {
    INVERSE_TOL.max(CONDITION_SLACK * f64::EPSILON * peak_condition)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error(
        "covariance lost positive definiteness at step {k}: eta = {eta:?}, eta_inv = {eta_inv:?}"
    )]
    NotPositiveDefinite { k: u64, eta: Mat2, eta_inv: Mat2 },
    #[error("covariance and information matrix drifted apart at step {k}: |eta*eta_inv - I| = {residual:e}")]
    InverseDrift { k: u64, residual: f64 },
    #[error("non-finite estimator input at step {k}")]
    NonFinite { k: u64 },
    #[error("excitation window needs {needed} samples, got {got}")]
    WindowTooShort { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorState {
    pub s_hat: PlanarVector,
    pub eta: Mat2,
    pub eta_inv: Mat2,
    pub k: u64,
    /// Largest condition number of `η⁻¹` up to and including step `k`.
    pub peak_condition: f64,
}

/// Per-update quantities kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainRecord {
    /// Estimator gain K.
    pub gain: PlanarVector,
    /// Error propagation matrix `I − K p₁₂ᵀ`.
    pub a: Mat2,
    pub varpi: f64,
}

impl EstimatorState {
    pub fn initial(params: &EstimatorParams) -> Self {
        let eta = params.eta0;
        // closed-form 2×2 inverse of the configured prior, computed once
        let det = eta[(0, 0)] * eta[(1, 1)] - eta[(0, 1)] * eta[(1, 0)];
        let eta_inv = Mat2::new(eta[(1, 1)], -eta[(0, 1)], -eta[(1, 0)], eta[(0, 0)]) / det;
        Self {
            s_hat: params.s_hat0,
            eta,
            eta_inv,
            k: 0,
            peak_condition: condition_number(&eta_inv),
        }
    }
}

/// `ϖ = −½(d₁ₛ² − d₂ₛ² − x₁ᵀx₁ + x₂ᵀx₂)`, equal to `p₁₂ᵀ s` for exact ranges.
pub fn compute_varpi(m: &Measurements, x1: PlanarVector, x2: PlanarVector) -> f64 {
    -0.5 * (m.d1s * m.d1s - m.d2s * m.d2s - x1.norm_squared() + x2.norm_squared())
}

fn innovation_denominator(
    state: &EstimatorState,
    p12: PlanarVector,
    params: &EstimatorParams,
) -> f64 {
    params.gamma1 * params.gamma2 + quad_form(&state.eta, p12)
}

/// `K = η p / (γ₁γ₂ + pᵀ η p)` using the prior covariance throughout.
pub fn gain(
    state: &EstimatorState,
    p12_next: PlanarVector,
    params: &EstimatorParams,
) -> PlanarVector {
    let denom = innovation_denominator(state, p12_next, params);
    (1.0 / denom) * (state.eta * p12_next)
}

/// Advances `(η, η⁻¹)` by one observation direction.
pub fn covariance_update(
    state: &EstimatorState,
    p12_next: PlanarVector,
    params: &EstimatorParams,
) -> Result<(Mat2, Mat2), EstimatorError> {
    let k = state.k + 1;
    if !p12_next.is_finite() {
        return Err(EstimatorError::NonFinite { k });
    }
    let (g1, g2) = (params.gamma1, params.gamma2);
    let eta_inv_next = g1 * state.eta_inv + (1.0 / g2) * p12_next.outer();

    let denom = innovation_denominator(state, p12_next, params);
    let eta_p = state.eta * p12_next;
    let eta_next = symmetrize(&((state.eta - eta_p.outer() / denom) / g1));

    let pd = |m: &Mat2| {
        let (lo, _) = sym_eigenvalues(m);
        lo > 0.0 && m.iter().all(|v| v.is_finite())
    };
    if !pd(&eta_next) || !pd(&eta_inv_next) {
        return Err(EstimatorError::NotPositiveDefinite {
            k,
            eta: eta_next,
            eta_inv: eta_inv_next,
        });
    }
    let residual = max_abs_diff(&(eta_next * eta_inv_next), &Mat2::identity());
    let peak = state.peak_condition.max(condition_number(&eta_inv_next));
    if residual > inverse_tolerance(peak) {
        return Err(EstimatorError::InverseDrift { k, residual });
    }
    Ok((eta_next, eta_inv_next))
}

/// One estimator update from the newest observation `(ϖ, p₁₂)`.
pub fn tpe_update(
    state: &EstimatorState,
    varpi_next: f64,
    p12_next: PlanarVector,
    params: &EstimatorParams,
) -> Result<(EstimatorState, GainRecord), EstimatorError> {
    if !varpi_next.is_finite() {
        return Err(EstimatorError::NonFinite { k: state.k + 1 });
    }
    let k_gain = gain(state, p12_next, params);
    let (eta, eta_inv) = covariance_update(state, p12_next, params)?;
    let innovation = varpi_next - p12_next.dot(state.s_hat);
    let next = EstimatorState {
        s_hat: state.s_hat + innovation * k_gain,
        eta,
        eta_inv,
        k: state.k + 1,
        peak_condition: state.peak_condition.max(condition_number(&eta_inv)),
    };
    let a = Mat2::identity()
        - Mat2::new(
            k_gain.x * p12_next.x,
            k_gain.x * p12_next.y,
            k_gain.y * p12_next.x,
            k_gain.y * p12_next.y,
        );
    Ok((
        next,
        GainRecord {
            gain: k_gain,
            a,
            varpi: varpi_next,
        },
    ))
}

/// Persistent-excitation levels of a baseline sequence and the resulting
/// bounds on the information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcitationBounds {
    pub window: usize,
    /// Smallest eigenvalue of `Σ p pᵀ` over any window.
    pub theta_hat: f64,
    /// Largest eigenvalue of `Σ p pᵀ` over any window.
    pub theta_check: f64,
    /// Lower bound: `η⁻¹(k) ⪰ b_hat·I` for `k ≥ N − 1`.
    pub b_hat: f64,
    /// Upper bound: `η⁻¹(k) ⪯ b_check`.
    pub b_check: Mat2,
}

impl ExcitationBounds {
    pub fn persistently_exciting(&self) -> bool {
        self.theta_hat > 0.0
    }
}

/// Computes the excitation levels over every length-`n` window of `p12` and
/// the information-matrix bounds they imply.
///
/// `eta_inv_history[j]` is η⁻¹ after the `j`-th update (index 0 is the
/// prior); entries `1..n` enter the upper bound.
pub fn excitation_bounds(
    p12: &[PlanarVector],
    eta_inv_history: &[Mat2],
    n: usize,
    params: &EstimatorParams,
) -> Result<ExcitationBounds, EstimatorError> {
    if n == 0 || p12.len() < n {
        return Err(EstimatorError::WindowTooShort {
            needed: n.max(1),
            got: p12.len(),
        });
    }
    if eta_inv_history.len() < n {
        return Err(EstimatorError::WindowTooShort {
            needed: n,
            got: eta_inv_history.len(),
        });
    }
    let mut theta_hat = f64::INFINITY;
    let mut theta_check = 0.0_f64;
    let mut sum: Mat2 = p12[..n].iter().map(|p| p.outer()).sum();
    for start in 0..=p12.len() - n {
        if start > 0 {
            // sliding window; recompute periodically to cap round-off build-up
            if start % 64 == 0 {
                sum = p12[start..start + n].iter().map(|p| p.outer()).sum();
            } else {
                sum += p12[start + n - 1].outer() - p12[start - 1].outer();
            }
        }
        let (lo, hi) = sym_eigenvalues(&sum);
        theta_hat = theta_hat.min(lo.max(0.0));
        theta_check = theta_check.max(hi);
    }

    let (g1, g2) = (params.gamma1, params.gamma2);
    let nf = n as f64;
    let (lower_scale, upper_history, upper_scale) = if g1 < 1.0 {
        let one_minus_pow = 1.0 - g1.powi(n as i32);
        (
            nf * g1.powi(n as i32 - 1) * (1.0 - g1) / (one_minus_pow * g2),
            (1.0 - g1) / one_minus_pow,
            nf / (one_minus_pow * g2),
        )
    } else {
        // γ₁ → 1 limits; without forgetting the upper bound is vacuous
        (1.0 / g2, 1.0 / nf, f64::INFINITY)
    };
    let history: Mat2 = eta_inv_history[1..n].iter().sum();
    let b_check = upper_history * history + upper_scale * theta_check * Mat2::identity();
    Ok(ExcitationBounds {
        window: n,
        theta_hat,
        theta_check,
        b_hat: lower_scale * theta_hat,
        b_check,
    })
}

/// Outcome of checking `b_hat·I ⪯ η⁻¹(k) ⪯ b_check` along a history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InformationBoundCheck {
    pub checked: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Smallest `λ_min(η⁻¹(k)) − b_hat` seen.
    pub min_lower_margin: f64,
    /// Smallest `λ_min(b_check − η⁻¹(k))` seen.
    pub min_upper_margin: f64,
}

impl InformationBoundCheck {
    pub fn holds(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0
    }
}

/// Checks the lower bound for `k ≥ N − 1` and the upper bound for all `k`,
/// in the Loewner order.
pub fn check_information_bounds(
    eta_inv_history: &[Mat2],
    bounds: &ExcitationBounds,
) -> InformationBoundCheck {
    let mut out = InformationBoundCheck {
        checked: 0,
        lower_violations: 0,
        upper_violations: 0,
        min_lower_margin: f64::INFINITY,
        min_upper_margin: f64::INFINITY,
    };
    for (k, eta_inv) in eta_inv_history.iter().enumerate() {
        out.checked += 1;
        let upper = if bounds.b_check.iter().any(|v| v.is_infinite()) {
            f64::INFINITY
        } else {
            sym_eigenvalues(&(bounds.b_check - eta_inv)).0
        };
        out.min_upper_margin = out.min_upper_margin.min(upper);
        if upper < 0.0 {
            out.upper_violations += 1;
        }
        if k + 1 >= bounds.window {
            let lower = sym_eigenvalues(eta_inv).0 - bounds.b_hat;
            out.min_lower_margin = out.min_lower_margin.min(lower);
            if lower < 0.0 {
                out.lower_violations += 1;
            }
        }
    }
    out
}
