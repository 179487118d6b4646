//! The closed loop.
//!
//! Tick order at step `k`:
//!
//! 1. measure ranges at `k`;
//! 2. update the estimate to `ŝ(k)` (skipped at `k = 0`, where `ŝ(0)` is the
//!    configured prior);
//! 3. compute both controls `u(k)` from `ŝ(k)`;
//! 4. move both agents;
//! 5. move the target;
//! 6. `k ← k + 1`.
//!
//! The target and the range noise draw from two independent ChaCha streams
//! derived from the scenario seed, so enabling noise does not change the
//! impulse schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::{dasc, CirclingTrajectory};
use crate::estimator::{compute_varpi, tpe_update, EstimatorError, EstimatorState, GainRecord};
use crate::geometry::{Mat2, PlanarVector};
use crate::plant::{
    actuation_for, agent_step, draw_impulse, global_to_actuation, sense, target_step, AgentState,
    PlantError, TargetState,
};
use crate::scenario::ScenarioConfig;

const TARGET_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Manual steering speed cap as a multiple of the drift amplitude.
pub const MANUAL_SPEED_FACTOR: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("trace row {k}: replayed estimate {replayed} differs from recorded {recorded}")]
    ReplayMismatch {
        k: u64,
        replayed: PlanarVector,
        recorded: PlanarVector,
    },
    #[error("trace rows must start at k = 0 and increase by one; row {index} has k = {k}")]
    BadStepIndex { index: usize, k: u64 },
}

/// One simulation tick, as written to trace files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: u64,
    pub x1: PlanarVector,
    pub x2: PlanarVector,
    pub s: PlanarVector,
    pub s_hat: PlanarVector,
    pub u1: PlanarVector,
    pub u2: PlanarVector,
    pub d12: f64,
    pub d1s: f64,
    pub d2s: f64,
    /// Target displacement applied after this tick, `s(k+1) − s(k)`.
    pub h: PlanarVector,
    pub e_hat_norm: f64,
    pub e_s_norm: f64,
    pub impulse: bool,
    pub saturated1: bool,
    pub saturated2: bool,
}

/// Estimator internals at one tick; not part of the trace file, rebuilt on replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorDiag {
    /// η⁻¹(k) after this tick's update.
    pub eta_inv: Mat2,
    pub eta: Mat2,
    /// `None` at `k = 0`.
    pub gain: Option<GainRecord>,
}

/// A full run: config, per-step records and estimator diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub config: ScenarioConfig,
    pub records: Vec<StepRecord>,
    pub diagnostics: Vec<EstimatorDiag>,
}

/// How the target moves this tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TargetInput {
    /// Drift plus scheduled random impulses.
    #[default]
    Autonomous,
    /// Operator velocity (replaces the drift) and an optional boost.
    Manual { velocity: PlanarVector, boost: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tick {
    pub record: StepRecord,
    pub diag: EstimatorDiag,
}

/// Stateful closed-loop stepper.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    traj: CirclingTrajectory,
    k: u64,
    agents: [AgentState; 2],
    prev: [PlanarVector; 2],
    target: TargetState,
    estimator: EstimatorState,
    target_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    last_impulse: Option<u64>,
    max_manual_speed: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Self {
        let mut target_rng = stream(cfg.run.seed, TARGET_STREAM);
        let target = TargetState::initial(cfg.init.s, &cfg.target, &mut target_rng);
        let agents = [
            AgentState::new(cfg.init.x1, 0.0),
            AgentState::new(cfg.init.x2, 0.0),
        ];
        Self {
            traj: CirclingTrajectory::from_params(&cfg.controller),
            k: 0,
            prev: [cfg.init.x1, cfg.init.x2],
            agents,
            target,
            estimator: EstimatorState::initial(&cfg.estimator),
            target_rng,
            noise_rng: stream(cfg.run.seed, NOISE_STREAM),
            last_impulse: None,
            max_manual_speed: cfg.target.drift_amp * MANUAL_SPEED_FACTOR,
            cfg,
        }
    }

    pub fn with_max_manual_speed(mut self, speed: f64) -> Self {
        self.max_manual_speed = speed;
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> u64 {
        self.k
    }

    pub fn max_manual_speed(&self) -> f64 {
        self.max_manual_speed
    }

    /// Steps until a manual boost is accepted; 0 when ready. Boosts are kept
    /// strictly more than `ell_min` steps after the previous impulse.
    pub fn boost_cooldown(&self) -> u64 {
        match self.last_impulse {
            Some(last) => (last + self.cfg.target.ell_min + 1).saturating_sub(self.k),
            None => 0,
        }
    }

    pub fn boost_ready(&self) -> bool {
        self.boost_cooldown() == 0
    }

    pub fn step(&mut self, input: TargetInput) -> Result<Tick, SimError> {
        let k = self.k;
        let cfg = &self.cfg;
        let [a1, a2] = self.agents;

        let m = sense(
            &a1,
            &a2,
            &self.target,
            self.prev[0],
            self.prev[1],
            cfg.run.range_noise_std,
            &mut self.noise_rng,
        );

        let gain = if k > 0 {
            let varpi = compute_varpi(&m, a1.position, a2.position);
            let (next, rec) = tpe_update(&self.estimator, varpi, m.p12, &cfg.estimator)?;
            self.estimator = next;
            Some(rec)
        } else {
            None
        };
        let s_hat = self.estimator.s_hat;

        let ctrl = dasc(
            a1.position,
            a2.position,
            s_hat,
            &self.traj,
            k,
            &cfg.controller,
        );
        let move_agent = |agent: AgentState, u: PlanarVector| -> Result<AgentState, PlantError> {
            let cmd = match global_to_actuation(u, agent, s_hat) {
                Ok(cmd) => cmd,
                // heading undefined: keep the current one
                Err(PlantError::DegenerateYaw(_)) => actuation_for(u, agent.yaw, agent.yaw),
                Err(e) => return Err(e),
            };
            agent_step(agent, cmd)
        };
        let n1 = move_agent(a1, ctrl.u1)?;
        let n2 = move_agent(a2, ctrl.u2)?;

        let s = self.target.position;
        let (h, impulse) = self.move_target(input);

        let e_hat = s - s_hat;
        let e_s = a1.position + a2.position - 2.0 * s;
        let record = StepRecord {
            k,
            x1: a1.position,
            x2: a2.position,
            s,
            s_hat,
            u1: ctrl.u1,
            u2: ctrl.u2,
            d12: m.d12,
            d1s: m.d1s,
            d2s: m.d2s,
            h,
            e_hat_norm: e_hat.norm(),
            e_s_norm: e_s.norm(),
            impulse,
            saturated1: ctrl.saturated1,
            saturated2: ctrl.saturated2,
        };

        self.prev = [a1.position, a2.position];
        self.agents = [n1, n2];
        self.k += 1;
        Ok(Tick {
            record,
            diag: EstimatorDiag {
                eta_inv: self.estimator.eta_inv,
                eta: self.estimator.eta,
                gain,
            },
        })
    }

    fn move_target(&mut self, input: TargetInput) -> (PlanarVector, bool) {
        let k = self.k;
        let params = &self.cfg.target;
        match input {
            TargetInput::Autonomous => {
                // resuming after manual control: never fire sooner than the cooldown allows
                if self.target.next_impulse_step < k {
                    let earliest = self.last_impulse.map_or(k, |l| l + params.ell_min);
                    self.target.next_impulse_step = earliest.max(k);
                }
                let step = target_step(self.target, k, params, &mut self.target_rng);
                self.target = step.state;
                if step.impulse {
                    self.last_impulse = Some(k);
                }
                (step.h, step.impulse)
            }
            TargetInput::Manual { velocity, boost } => {
                let velocity = if velocity.is_finite() {
                    velocity
                } else {
                    PlanarVector::ZERO
                };
                let speed = velocity.norm();
                let mut h = if speed > self.max_manual_speed {
                    (self.max_manual_speed / speed) * velocity
                } else {
                    velocity
                };
                let fire = boost && self.boost_ready();
                if fire {
                    h += if speed > 0.0 {
                        (params.theta_max / speed) * velocity
                    } else {
                        std::f64::consts::FRAC_1_SQRT_2 * draw_impulse(params, &mut self.target_rng)
                    };
                    self.last_impulse = Some(k);
                    self.target.impulses_emitted += 1;
                    self.target.next_impulse_step = k + params.ell_min + 1;
                }
                self.target.position += h;
                (h, fire)
            }
        }
    }
}

/// Runs the scenario autonomously for `cfg.run.steps` ticks.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Trace, SimError> {
    let mut sim = Simulation::new(cfg.clone());
    let n = cfg.run.steps as usize;
    let mut records = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    for _ in 0..n {
        let tick = sim.step(TargetInput::Autonomous)?;
        records.push(tick.record);
        diagnostics.push(tick.diag);
    }
    Ok(Trace {
        config: cfg.clone(),
        records,
        diagnostics,
    })
}

impl Trace {
    /// Rebuilds the estimator diagnostics from recorded ranges and positions,
    /// checking that the replayed estimate reproduces the recorded one exactly.
    pub fn replay(config: ScenarioConfig, records: Vec<StepRecord>) -> Result<Self, SimError> {
        let mut est = EstimatorState::initial(&config.estimator);
        let mut diagnostics = Vec::with_capacity(records.len());
        for (index, r) in records.iter().enumerate() {
            if r.k != index as u64 {
                return Err(SimError::BadStepIndex { index, k: r.k });
            }
            let gain = if r.k > 0 {
                let m = crate::plant::Measurements {
                    d12: r.d12,
                    d1s: r.d1s,
                    d2s: r.d2s,
                    p12: r.x1 - r.x2,
                    psi1: PlanarVector::ZERO,
                    psi2: PlanarVector::ZERO,
                };
                let varpi = compute_varpi(&m, r.x1, r.x2);
                let (next, rec) = tpe_update(&est, varpi, m.p12, &config.estimator)?;
                est = next;
                Some(rec)
            } else {
                None
            };
            if est.s_hat != r.s_hat {
                return Err(SimError::ReplayMismatch {
                    k: r.k,
                    replayed: est.s_hat,
                    recorded: r.s_hat,
                });
            }
            diagnostics.push(EstimatorDiag {
                eta_inv: est.eta_inv,
                eta: est.eta,
                gain,
            });
        }
        Ok(Self {
            config,
            records,
            diagnostics,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Baselines `p₁₂(k)` for every recorded step.
    pub fn baselines(&self) -> Vec<PlanarVector> {
        self.records.iter().map(|r| r.x1 - r.x2).collect()
    }

    /// η⁻¹(k) for every recorded step, index 0 being the prior.
    pub fn information_history(&self) -> Vec<Mat2> {
        self.diagnostics.iter().map(|d| d.eta_inv).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::paper_scenario;

    #[test]
    fn first_tick_matches_hand_values() {
        let mut sim = Simulation::new(paper_scenario());
        let t = sim.step(TargetInput::Autonomous).unwrap();
        let r = t.record;
        assert_eq!(r.k, 0);
        assert_eq!(r.s_hat, PlanarVector::ZERO);
        assert!(t.diag.gain.is_none());
        assert_eq!(r.u1, PlanarVector::new(0.0, -0.5));
        assert!((r.u2 - PlanarVector::new(0.0, -0.34)).norm() < 1e-14);
        assert!(r.saturated1 && !r.saturated2);
        assert!(r.impulse);
        assert!((r.e_s_norm - 3.6).abs() < 1e-14);
        assert_eq!(r.e_hat_norm, 0.0);
    }

    #[test]
    fn agents_move_by_global_control() {
        let mut sim = Simulation::new(paper_scenario());
        let mut prev = sim.step(TargetInput::Autonomous).unwrap().record;
        for _ in 0..50 {
            let r = sim.step(TargetInput::Autonomous).unwrap().record;
            assert!((r.x1 - (prev.x1 + prev.u1)).norm() < 1e-12);
            assert!((r.x2 - (prev.x2 + prev.u2)).norm() < 1e-12);
            assert_eq!(r.s, prev.s + prev.h);
            prev = r;
        }
    }

    #[test]
    fn deterministic_runs() {
        let cfg = paper_scenario().with_seed(42);
        assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
        let other = run_scenario(&paper_scenario().with_seed(43)).unwrap();
        assert_ne!(run_scenario(&cfg).unwrap().records, other.records);
    }

    #[test]
    fn noise_does_not_change_impulse_schedule() {
        let clean = run_scenario(&paper_scenario().with_seed(5)).unwrap();
        let mut noisy_cfg = paper_scenario().with_seed(5);
        noisy_cfg.run.range_noise_std = 0.01;
        let noisy = run_scenario(&noisy_cfg).unwrap();
        let flags = |t: &Trace| {
            t.records
                .iter()
                .map(|r| (r.impulse, r.h))
                .collect::<Vec<_>>()
        };
        assert_eq!(flags(&clean), flags(&noisy));
    }

    #[test]
    fn replay_reproduces_diagnostics() {
        let t = run_scenario(&paper_scenario().with_seed(9)).unwrap();
        let replayed = Trace::replay(t.config.clone(), t.records.clone()).unwrap();
        assert_eq!(replayed, t);
    }

    #[test]
    fn replay_detects_tampering() {
        let t = run_scenario(&paper_scenario()).unwrap();
        let mut records = t.records.clone();
        records[10].d1s += 1e-3;
        assert!(matches!(
            Trace::replay(t.config.clone(), records),
            Err(SimError::ReplayMismatch { k: 10, .. })
        ));
    }

    #[test]
    fn manual_boost_respects_cooldown() {
        let mut cfg = paper_scenario();
        cfg.target.first_impulse_at_zero = false;
        let mut sim = Simulation::new(cfg);
        let boost = TargetInput::Manual {
            velocity: PlanarVector::new(0.0, 1.0),
            boost: true,
        };
        let first = sim.step(boost).unwrap().record;
        assert!(first.impulse);
        // steering capped at 0.5, boost along the steering direction with magnitude 1.5
        assert!((first.h - PlanarVector::new(0.0, 2.0)).norm() < 1e-15);
        // the next impulse must come more than ell_min = 20 steps later
        assert_eq!(sim.boost_cooldown(), 20);
        for _ in 1..=20 {
            assert!(!sim.step(boost).unwrap().record.impulse);
        }
        assert!(sim.boost_ready());
        let second = sim.step(boost).unwrap().record;
        assert!(second.impulse);
        assert_eq!(second.k - first.k, 21);
    }

    #[test]
    fn manual_speed_is_capped() {
        let mut sim = Simulation::new(paper_scenario());
        sim.step(TargetInput::Autonomous).unwrap();
        let r = sim
            .step(TargetInput::Manual {
                velocity: PlanarVector::new(30.0, 40.0),
                boost: false,
            })
            .unwrap()
            .record;
        assert!((r.h.norm() - 0.5).abs() < 1e-15);
        assert!(!r.impulse);
    }

    #[test]
    fn autonomous_resumes_after_manual() {
        let mut sim = Simulation::new(paper_scenario());
        sim.step(TargetInput::Autonomous).unwrap();
        for _ in 0..200 {
            sim.step(TargetInput::Manual {
                velocity: PlanarVector::ZERO,
                boost: false,
            })
            .unwrap();
        }
        let impulses = (0..100)
            .filter(|_| sim.step(TargetInput::Autonomous).unwrap().record.impulse)
            .count();
        assert!(impulses >= 1);
    }
}
