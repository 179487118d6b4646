//! Ground truth: agent kinematics, impulsive target motion and range sensing.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::geometry::{wrap_angle, PlanarVector};
use crate::scenario::TargetMotionParams;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("non-finite actuation command {0:?}")]
    NonFiniteCommand(ActuationCommand),
    #[error("estimate coincides with agent position {0}; heading undefined")]
    DegenerateYaw(PlanarVector),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentState {
    pub position: PlanarVector,
    /// Heading φ in `(−π, π]`.
    pub yaw: f64,
}

impl AgentState {
    pub fn new(position: PlanarVector, yaw: f64) -> Self {
        Self {
            position,
            yaw: wrap_angle(yaw),
        }
    }
}

/// Body-frame displacement plus the heading to adopt after moving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActuationCommand {
    pub dx_local: f64,
    pub dy_local: f64,
    pub new_yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetState {
    pub position: PlanarVector,
    pub next_impulse_step: u64,
    pub impulses_emitted: u64,
}

/// Outcome of one target transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetStep {
    pub state: TargetState,
    /// Total displacement applied, drift plus any impulse.
    pub h: PlanarVector,
    pub impulse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measurements {
    pub d12: f64,
    pub d1s: f64,
    pub d2s: f64,
    /// Baseline `x₁ − x₂`.
    pub p12: PlanarVector,
    /// Self-displacement of each agent over the last step.
    pub psi1: PlanarVector,
    pub psi2: PlanarVector,
}

/// Moves an agent by a body-frame displacement rotated with the pre-step yaw,
/// then adopts `cmd.new_yaw`.
pub fn agent_step(state: AgentState, cmd: ActuationCommand) -> Result<AgentState, PlantError> {
    if !(cmd.dx_local.is_finite() && cmd.dy_local.is_finite() && cmd.new_yaw.is_finite()) {
        return Err(PlantError::NonFiniteCommand(cmd));
    }
    let (sin, cos) = state.yaw.sin_cos();
    let delta = PlanarVector::new(
        cmd.dx_local * cos - cmd.dy_local * sin,
        cmd.dx_local * sin + cmd.dy_local * cos,
    );
    Ok(AgentState {
        position: state.position + delta,
        yaw: wrap_angle(cmd.new_yaw),
    })
}

/// Body-frame displacement that realizes the global displacement `u` for an
/// agent currently heading `yaw`.
pub fn actuation_for(u: PlanarVector, yaw: f64, new_yaw: f64) -> ActuationCommand {
    let (sin, cos) = yaw.sin_cos();
    ActuationCommand {
        dx_local: u.x * cos + u.y * sin,
        dy_local: -u.x * sin + u.y * cos,
        new_yaw: wrap_angle(new_yaw),
    }
}

/// Converts a global-frame control into a body-frame command and points the
/// agent at the current target estimate.
pub fn global_to_actuation(
    u: PlanarVector,
    agent: AgentState,
    s_hat: PlanarVector,
) -> Result<ActuationCommand, PlantError> {
    let los = s_hat - agent.position;
    if los == PlanarVector::ZERO {
        return Err(PlantError::DegenerateYaw(agent.position));
    }
    Ok(actuation_for(u, agent.yaw, los.y.atan2(los.x)))
}

/// Slow drift component `drift_amp·(cos ωk, sin ωk)`.
pub fn drift(k: u64, params: &TargetMotionParams) -> PlanarVector {
    let (sin, cos) = (params.drift_freq * k as f64).sin_cos();
    params.drift_amp * PlanarVector::new(cos, sin)
}

/// One impulse draw, `theta_max·U(0,1)` per axis (`U(-1,1)` when signed).
pub fn draw_impulse<R: Rng + ?Sized>(params: &TargetMotionParams, rng: &mut R) -> PlanarVector {
    let mut axis = || {
        let u: f64 = rng.random();
        if params.signed_impulses {
            2.0 * u - 1.0
        } else {
            u
        }
    };
    let x = axis();
    let y = axis();
    params.theta_max * PlanarVector::new(x, y)
}

pub fn draw_gap<R: Rng + ?Sized>(params: &TargetMotionParams, rng: &mut R) -> u64 {
    rng.random_range(params.ell_min..=params.ell_max)
}

impl TargetState {
    pub fn initial<R: Rng + ?Sized>(
        position: PlanarVector,
        params: &TargetMotionParams,
        rng: &mut R,
    ) -> Self {
        let next_impulse_step = if params.first_impulse_at_zero {
            0
        } else {
            draw_gap(params, rng)
        };
        Self {
            position,
            next_impulse_step,
            impulses_emitted: 0,
        }
    }
}

/// Advances the target from step `k` to `k + 1`.
///
/// Random draws happen only at impulse steps: two for the impulse, then one
/// for the next gap.
pub fn target_step<R: Rng + ?Sized>(
    state: TargetState,
    k: u64,
    params: &TargetMotionParams,
    rng: &mut R,
) -> TargetStep {
    let mut h = drift(k, params);
    let mut next = state;
    let impulse = k == state.next_impulse_step;
    if impulse {
        h += draw_impulse(params, rng);
        next.next_impulse_step = k + draw_gap(params, rng);
        next.impulses_emitted += 1;
    }
    next.position += h;
    TargetStep {
        state: next,
        h,
        impulse,
    }
}

/// Range measurements at the current instant.
///
/// With `noise_std > 0` each of the three distances gets independent
/// Gaussian noise, truncated at zero. Baseline and self-displacements are
/// exact.
#[allow(clippy::too_many_arguments)]
pub fn sense<R: Rng + ?Sized>(
    x1: &AgentState,
    x2: &AgentState,
    s: &TargetState,
    prev1: PlanarVector,
    prev2: PlanarVector,
    noise_std: f64,
    rng: &mut R,
) -> Measurements {
    let p12 = x1.position - x2.position;
    let mut d12 = p12.norm();
    let mut d1s = (x1.position - s.position).norm();
    let mut d2s = (x2.position - s.position).norm();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("noise std is finite and positive");
        for d in [&mut d12, &mut d1s, &mut d2s] {
            *d = (*d + normal.sample(rng)).max(0.0);
        }
    }
    Measurements {
        d12,
        d1s,
        d2s,
        p12,
        psi1: x1.position - prev1,
        psi2: x2.position - prev2,
    }
}
