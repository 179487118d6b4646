//! Distributed anti-synchronization controller.
//!
//! Each agent steers toward its own moving setpoint on a circle around the
//! shared target estimate: agent 1 toward `ŝ − ζ(k)`, agent 2 toward
//! `ŝ + ζ(k)`. Only own position, the estimate and the step index are used.

use std::f64::consts::TAU;

use serde::Serialize;

use crate::geometry::PlanarVector;
use crate::scenario::{ControllerParams, SaturationMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("gain condition 0 < |1 + alpha| < 1 violated: |1 + {alpha}| = {value}")]
    GainCondition { alpha: f64, value: f64 },
}

/// Preset circling trajectory `ζ(k) = r·(sin φ_k, cos φ_k)`,
/// `φ_k = 2π (k mod P) / P + phase0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CirclingTrajectory {
    pub radius: f64,
    pub period_steps: u64,
    pub phase0: f64,
}

impl CirclingTrajectory {
    pub fn from_params(params: &ControllerParams) -> Self {
        Self {
            radius: params.radius,
            period_steps: params.period_steps,
            phase0: params.phase0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlOutput {
    pub u1: PlanarVector,
    pub u2: PlanarVector,
    pub u1_raw: PlanarVector,
    pub u2_raw: PlanarVector,
    pub saturated1: bool,
    pub saturated2: bool,
}

/// Point of the circling trajectory at step `k`; exactly periodic in `k`.
pub fn zeta(traj: &CirclingTrajectory, k: u64) -> PlanarVector {
    let phase = TAU * (k % traj.period_steps) as f64 / traj.period_steps as f64 + traj.phase0;
    let (sin, cos) = phase.sin_cos();
    traj.radius * PlanarVector::new(sin, cos)
}

fn saturate(u: PlanarVector, sat: f64, mode: SaturationMode) -> (PlanarVector, bool) {
    match mode {
        SaturationMode::PerAxis => {
            let clamped = u.map(|v| v.clamp(-sat, sat));
            (clamped, clamped != u)
        }
        SaturationMode::Norm => {
            let n = u.norm();
            if n > sat {
                ((sat / n) * u, true)
            } else {
                (u, false)
            }
        }
    }
}

/// Controls for both agents at step `k`.
pub fn dasc(
    x1: PlanarVector,
    x2: PlanarVector,
    s_hat: PlanarVector,
    traj: &CirclingTrajectory,
    k: u64,
    params: &ControllerParams,
) -> ControlOutput {
    let z = zeta(traj, k);
    let u1_raw = params.alpha * (x1 - s_hat + z);
    let u2_raw = params.alpha * (x2 - s_hat - z);
    let (u1, saturated1) = saturate(u1_raw, params.sat, params.saturation);
    let (u2, saturated2) = saturate(u2_raw, params.sat, params.saturation);
    ControlOutput {
        u1,
        u2,
        u1_raw,
        u2_raw,
        saturated1,
        saturated2,
    }
}

/// Bound `μ̄ = |α|(d₁₂(0) + 2r)` on the control difference `‖u₁ − u₂‖`.
pub fn control_delta_bound(params: &ControllerParams, d12_0: f64) -> Result<f64, ControllerError> {
    let value = (1.0 + params.alpha).abs();
    if !(value > 0.0 && value < 1.0) {
        return Err(ControllerError::GainCondition {
            alpha: params.alpha,
            value,
        });
    }
    Ok(params.alpha.abs() * (d12_0 + 2.0 * params.radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::paper_scenario;

    fn reference() -> (ControllerParams, CirclingTrajectory) {
        let c = paper_scenario().controller;
        let t = CirclingTrajectory::from_params(&c);
        (c, t)
    }

    #[test]
    fn zeta_reference_points() {
        let (_, t) = reference();
        assert_eq!(zeta(&t, 0), PlanarVector::new(0.0, 2.0));
        let q = zeta(&t, 12);
        assert!((q - PlanarVector::new(2.0, 0.0)).norm() < 1e-15);
        for k in 0..200 {
            assert_eq!(zeta(&t, k), zeta(&t, k + t.period_steps));
            assert!((zeta(&t, k).norm() - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_controls() {
        let (c, t) = reference();
        let out = dasc(
            PlanarVector::new(0.0, 1.2),
            PlanarVector::new(0.0, 2.4),
            PlanarVector::ZERO,
            &t,
            0,
            &c,
        );
        assert!((out.u1_raw - PlanarVector::new(0.0, -2.72)).norm() < 1e-14);
        assert_eq!(out.u1, PlanarVector::new(0.0, -0.5));
        assert!(out.saturated1);
        assert!((out.u2_raw - PlanarVector::new(0.0, -0.34)).norm() < 1e-14);
        assert_eq!(out.u2, out.u2_raw);
        assert!(!out.saturated2);
    }

    #[test]
    fn on_setpoint_is_fixed_point() {
        let (c, t) = reference();
        let s_hat = PlanarVector::new(0.3, -1.1);
        let k = 17;
        let z = zeta(&t, k);
        let out = dasc(s_hat - z, s_hat + z, s_hat, &t, k, &c);
        assert!(out.u1.norm() < 1e-15);
        assert!(out.u2.norm() < 1e-15);
    }

    #[test]
    fn norm_saturation() {
        let (mut c, t) = reference();
        c.saturation = SaturationMode::Norm;
        let out = dasc(
            PlanarVector::new(5.0, 5.0),
            PlanarVector::ZERO,
            PlanarVector::ZERO,
            &t,
            0,
            &c,
        );
        assert!(out.saturated1);
        assert!((out.u1.norm() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn delta_bound() {
        let (c, _) = reference();
        assert!((control_delta_bound(&c, 1.2).unwrap() - 4.42).abs() < 1e-12);

        let mut tiny = c.clone();
        tiny.alpha = -1e-12;
        assert!(control_delta_bound(&tiny, 1.2).unwrap() < 1e-10);

        let mut flat = c.clone();
        flat.radius = 0.0;
        assert_eq!(control_delta_bound(&flat, 0.0).unwrap(), 0.0);

        let mut bad = c;
        bad.alpha = -2.5;
        assert!(matches!(
            control_delta_bound(&bad, 1.0),
            Err(ControllerError::GainCondition { .. })
        ));
    }
}
