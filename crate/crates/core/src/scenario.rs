//! Experiment configuration: parameters, initial states, seed and run length.
//!
//! Configs are stored as TOML with `[estimator]`, `[controller]`, `[target]`,
//! `[init]` and `[run]` sections. [`load_scenario`] is the only way to obtain a
//! [`ScenarioConfig`] from text, and it always validates.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{sym_eigenvalues, Mat2, PlanarVector};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: `{field}` = {value} violates {bound}")]
    Invalid {
        field: &'static str,
        value: String,
        bound: &'static str,
    },
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(
    field: &'static str,
    value: impl std::fmt::Display,
    bound: &'static str,
) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        value: value.to_string(),
        bound,
    }
}

/// Forgetting-factor least-squares estimator parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorParams {
    /// Exponential forgetting factor γ₁.
    pub gamma1: f64,
    /// New-information utilization factor γ₂.
    pub gamma2: f64,
    /// Initial covariance η(0).
    #[serde(serialize_with = "mat2_rows::serialize")]
    pub eta0: Mat2,
    /// Initial target estimate ŝ(0).
    pub s_hat0: PlanarVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SaturationMode {
    /// Clamp each global-frame component to `[-sat, sat]`.
    #[default]
    PerAxis,
    /// Scale the control so its Euclidean norm is at most `sat`.
    Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerParams {
    /// Controller gain α; must satisfy `0 < |1 + α| < 1`.
    pub alpha: f64,
    /// Circling radius r in meters.
    pub radius: f64,
    /// Steps per revolution of the circling trajectory.
    pub period_steps: u64,
    /// Control saturation in meters per step. `inf` disables it.
    pub sat: f64,
    pub saturation: SaturationMode,
    /// Phase offset of the circling trajectory in radians.
    pub phase0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetMotionParams {
    /// Amplitude of the slow drift `drift_amp·(cos ωk, sin ωk)`.
    pub drift_amp: f64,
    /// Drift angular rate ω in radians per step.
    pub drift_freq: f64,
    /// Per-axis impulse magnitude cap.
    pub theta_max: f64,
    /// Minimum gap between impulses, in steps.
    pub ell_min: u64,
    /// Maximum gap between impulses, in steps.
    pub ell_max: u64,
    pub first_impulse_at_zero: bool,
    /// Draw each impulse axis from `U(-1, 1)` instead of `U(0, 1)`.
    pub signed_impulses: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialState {
    pub x1: PlanarVector,
    pub x2: PlanarVector,
    pub s: PlanarVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunParams {
    pub steps: u64,
    pub seed: u64,
    /// Std-dev of additive Gaussian noise on every range, meters.
    pub range_noise_std: f64,
}

/// A complete, validated closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub estimator: EstimatorParams,
    pub controller: ControllerParams,
    pub target: TargetMotionParams,
    pub init: InitialState,
    pub run: RunParams,
}

mod mat2_rows {
    use super::Mat2;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(m: &Mat2, s: S) -> Result<S::Ok, S::Error> {
        use serde::Serialize;
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]].serialize(s)
    }
}

// Wire form with optional keys; defaults are resolved in `TryFrom`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    estimator: RawEstimator,
    controller: RawController,
    target: RawTarget,
    init: InitialStateRaw,
    run: RawRun,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    gamma1: f64,
    gamma2: f64,
    eta0: Option<[[f64; 2]; 2]>,
    s_hat0: PlanarVector,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    alpha: f64,
    radius: f64,
    period_steps: u64,
    sat: f64,
    #[serde(default)]
    saturation: SaturationMode,
    #[serde(default)]
    phase0: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    drift_amp: f64,
    drift_freq: f64,
    theta_max: f64,
    ell_min: u64,
    ell_max: Option<u64>,
    first_impulse_at_zero: Option<bool>,
    #[serde(default)]
    signed_impulses: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialStateRaw {
    x1: PlanarVector,
    x2: PlanarVector,
    s: PlanarVector,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    steps: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    range_noise_std: f64,
}

impl From<RawScenario> for ScenarioConfig {
    fn from(raw: RawScenario) -> Self {
        let eta0 = raw
            .estimator
            .eta0
            .map(|r| Mat2::new(r[0][0], r[0][1], r[1][0], r[1][1]))
            .unwrap_or_else(Mat2::identity);
        ScenarioConfig {
            estimator: EstimatorParams {
                gamma1: raw.estimator.gamma1,
                gamma2: raw.estimator.gamma2,
                eta0,
                s_hat0: raw.estimator.s_hat0,
            },
            controller: ControllerParams {
                alpha: raw.controller.alpha,
                radius: raw.controller.radius,
                period_steps: raw.controller.period_steps,
                sat: raw.controller.sat,
                saturation: raw.controller.saturation,
                phase0: raw.controller.phase0,
            },
            target: TargetMotionParams {
                drift_amp: raw.target.drift_amp,
                drift_freq: raw.target.drift_freq,
                theta_max: raw.target.theta_max,
                ell_min: raw.target.ell_min,
                ell_max: raw
                    .target
                    .ell_max
                    .unwrap_or(raw.target.ell_min.saturating_mul(3)),
                first_impulse_at_zero: raw.target.first_impulse_at_zero.unwrap_or(true),
                signed_impulses: raw.target.signed_impulses,
            },
            init: InitialState {
                x1: raw.init.x1,
                x2: raw.init.x2,
                s: raw.init.s,
            },
            run: RunParams {
                steps: raw.run.steps,
                seed: raw.run.seed,
                range_noise_std: raw.run.range_noise_std,
            },
        }
    }
}

/// Parses and validates a TOML scenario document.
pub fn load_scenario(source: &str) -> Result<ScenarioConfig, ScenarioError> {
    let raw: RawScenario =
        toml::from_str(source).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let cfg = ScenarioConfig::from(raw);
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a scenario file.
pub fn load_scenario_file(path: &std::path::Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

/// The two-agent closed-loop scenario with the reference parameter set:
/// γ₁ = 0.3, γ₂ = 0.9, α = −0.85, r = 2 with a 48-step period, 0.5 m/step
/// per-axis saturation, drift `0.02·(cos 0.01k, sin 0.01k)`, impulses of up to
/// 1.5 m per axis at least 20 steps apart, 300 steps.
pub fn paper_scenario() -> ScenarioConfig {
    ScenarioConfig {
        estimator: EstimatorParams {
            gamma1: 0.3,
            gamma2: 0.9,
            eta0: Mat2::identity(),
            s_hat0: PlanarVector::ZERO,
        },
        controller: ControllerParams {
            alpha: -0.85,
            radius: 2.0,
            period_steps: 48,
            sat: 0.5,
            saturation: SaturationMode::PerAxis,
            phase0: 0.0,
        },
        target: TargetMotionParams {
            drift_amp: 0.02,
            drift_freq: 0.01,
            theta_max: 1.5,
            ell_min: 20,
            ell_max: 60,
            first_impulse_at_zero: true,
            signed_impulses: false,
        },
        init: InitialState {
            x1: PlanarVector::new(0.0, 1.2),
            x2: PlanarVector::new(0.0, 2.4),
            s: PlanarVector::ZERO,
        },
        run: RunParams {
            steps: 300,
            seed: 0,
            range_noise_std: 0.0,
        },
    }
}

fn finite_vec(field: &'static str, v: PlanarVector) -> Result<(), ScenarioError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, v, "finite components"))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let e = &self.estimator;
        if !(e.gamma1 > 0.0 && e.gamma1 <= 1.0) {
            return Err(invalid("estimator.gamma1", e.gamma1, "0 < gamma1 <= 1"));
        }
        if !(e.gamma2 > 0.0 && e.gamma2 <= 1.0) {
            return Err(invalid("estimator.gamma2", e.gamma2, "0 < gamma2 <= 1"));
        }
        if !e.eta0.iter().all(|v| v.is_finite()) || e.eta0[(0, 1)] != e.eta0[(1, 0)] {
            return Err(invalid(
                "estimator.eta0",
                e.eta0.transpose(),
                "finite and symmetric",
            ));
        }
        if sym_eigenvalues(&e.eta0).0 <= 0.0 {
            return Err(invalid(
                "estimator.eta0",
                e.eta0.transpose(),
                "positive definite",
            ));
        }
        finite_vec("estimator.s_hat0", e.s_hat0)?;

        let c = &self.controller;
        let contraction = (1.0 + c.alpha).abs();
        if !(contraction > 0.0 && contraction < 1.0) {
            return Err(invalid("controller.alpha", c.alpha, "0 < |1 + alpha| < 1"));
        }
        if !(c.radius > 0.0 && c.radius.is_finite()) {
            return Err(invalid("controller.radius", c.radius, "radius > 0"));
        }
        if c.period_steps < 4 {
            return Err(invalid(
                "controller.period_steps",
                c.period_steps,
                "period_steps >= 4",
            ));
        }
        if c.sat.is_nan() || c.sat <= 0.0 {
            return Err(invalid("controller.sat", c.sat, "sat > 0"));
        }
        if !c.phase0.is_finite() {
            return Err(invalid("controller.phase0", c.phase0, "finite"));
        }

        let t = &self.target;
        if !(t.drift_amp >= 0.0 && t.drift_amp.is_finite()) {
            return Err(invalid("target.drift_amp", t.drift_amp, "drift_amp >= 0"));
        }
        if !t.drift_freq.is_finite() {
            return Err(invalid("target.drift_freq", t.drift_freq, "finite"));
        }
        if !(t.theta_max >= 0.0 && t.theta_max.is_finite()) {
            return Err(invalid("target.theta_max", t.theta_max, "theta_max >= 0"));
        }
        if t.ell_min < 1 {
            return Err(invalid("target.ell_min", t.ell_min, "ell_min >= 1"));
        }
        if t.ell_max < t.ell_min {
            return Err(invalid("target.ell_max", t.ell_max, "ell_max >= ell_min"));
        }

        let i = &self.init;
        finite_vec("init.x1", i.x1)?;
        finite_vec("init.x2", i.x2)?;
        finite_vec("init.s", i.s)?;
        if i.x1 == i.x2 {
            return Err(invalid(
                "init.x2",
                i.x2,
                "x1 != x2 (nonzero initial baseline)",
            ));
        }

        let r = &self.run;
        if r.steps < 1 {
            return Err(invalid("run.steps", r.steps, "steps >= 1"));
        }
        if !(r.range_noise_std >= 0.0 && r.range_noise_std.is_finite()) {
            return Err(invalid(
                "run.range_noise_std",
                r.range_noise_std,
                "range_noise_std >= 0",
            ));
        }
        Ok(())
    }

    /// Canonical TOML form; reloading it yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes to TOML")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.run.seed = seed;
        self
    }
}
