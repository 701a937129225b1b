//! Training and evaluation scenarios.
//!
//! Load and fault magnitudes have no network behind them; their MW and Ω
//! draws are mapped affinely onto a per-unit disturbance on the plant input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::SimRng;
use crate::sim::{DisturbanceEvent, DisturbanceKind, SetpointSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    StepUp,
    StepDown,
    MultiAgentStep,
    LoadEnergize,
    Fault,
    VoltageStep,
}

impl ScenarioKind {
    pub fn is_disturbance(self) -> bool {
        matches!(self, ScenarioKind::LoadEnergize | ScenarioKind::Fault)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub schedule: SetpointSchedule,
    #[serde(default)]
    pub disturbances: Vec<DisturbanceEvent>,
    pub duration: f64,
    pub comm_step: f64,
}

impl Scenario {
    /// Instant of the last scheduled change or disturbance.
    pub fn last_event(&self) -> f64 {
        self.disturbances
            .iter()
            .map(|d| d.start)
            .fold(self.schedule.last_time(), f64::max)
    }

    /// `tau` is the slowest time constant of the loop the scenario runs on.
    pub fn validate(&self, tau: f64) -> Result<()> {
        self.schedule.validate("scenario.schedule")?;
        for (i, d) in self.disturbances.iter().enumerate() {
            d.validate(&format!("scenario.disturbances[{i}]"))?;
        }
        if !(self.comm_step > 0.0) {
            return Err(Error::config("scenario.comm_step", "must be > 0"));
        }
        if self.duration < self.last_event() + 20.0 * tau - 1e-12 {
            return Err(Error::config(
                "scenario.duration",
                format!(
                    "must cover the last event ({} s) plus 20 time constants ({} s)",
                    self.last_event(),
                    20.0 * tau
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiAgentScenario {
    pub agents: Vec<Scenario>,
    /// Output-deviation coupling between loops.
    pub coupling: f64,
}

impl MultiAgentScenario {
    pub fn validate(&self, tau: f64) -> Result<()> {
        if self.agents.len() < 2 {
            return Err(Error::config("scenario.agents", "need at least two agents"));
        }
        if !(0.0..=0.2).contains(&self.coupling) {
            return Err(Error::config("scenario.coupling", "must lie in [0, 0.2]"));
        }
        for a in &self.agents {
            a.validate(tau)?;
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.agents.iter().map(|a| a.duration).fold(0.0, f64::max)
    }
}

/// Affine map from a physical draw onto a disturbance magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnitudeMap {
    /// Physical support of the draw (MW or Ω).
    pub lo: f64,
    pub hi: f64,
    /// Magnitude at `lo` and at `hi` (pu).
    pub at_lo: f64,
    pub at_hi: f64,
}

impl MagnitudeMap {
    pub fn map(&self, v: f64) -> f64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        self.at_lo * (1.0 - t) + self.at_hi * t
    }

    pub fn draw(&self, rng: &mut SimRng) -> f64 {
        rng.gen_range(self.lo..=self.hi)
    }

    fn validate(&self, key: &str) -> Result<()> {
        if !(self.lo < self.hi) {
            return Err(Error::config(format!("{key}.lo"), "must be < hi"));
        }
        if !self.at_lo.is_finite() || !self.at_hi.is_finite() {
            return Err(Error::config(format!("{key}.at_lo"), "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    /// Step or event instant in training scenarios (s).
    pub event_time: f64,
    /// Time simulated after the last event (s).
    pub settle_margin: f64,
    pub setpoint_comm_step: f64,
    pub disturbance_comm_step: f64,
    /// Upper limit of random step-up and voltage targets (pu).
    pub step_limit: f64,
    /// Load MW onto input-step magnitude.
    pub load: MagnitudeMap,
    /// Fault Ω onto decaying-pulse amplitude (decreasing in Ω).
    pub fault: MagnitudeMap,
    pub fault_decay_tau: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            event_time: 0.01,
            settle_margin: 0.1,
            setpoint_comm_step: 1e-4,
            disturbance_comm_step: 5e-5,
            step_limit: 1.1,
            load: MagnitudeMap {
                lo: 1.0,
                hi: 10.0,
                at_lo: 0.02,
                at_hi: 0.2,
            },
            fault: MagnitudeMap {
                lo: 0.01,
                hi: 10.0,
                at_lo: 2.0,
                at_hi: 0.2,
            },
            fault_decay_tau: 0.004,
        }
    }
}

/// Case-study event instants.
pub const CASE_STEP_TIME: f64 = 0.2;
pub const CASE_SECOND_STEP_TIME: f64 = 0.25;
/// Case 5 outer reference after the step.
pub const CASE5_TARGET: f64 = 0.9;
pub const CASE_EVENT_TIME: f64 = 0.25;

impl ScenarioParams {
    pub fn validate(&self, section: &str) -> Result<()> {
        let key = |f: &str| format!("{section}.{f}");
        if !(self.event_time > 0.0) {
            return Err(Error::config(key("event_time"), "must be > 0"));
        }
        if !(self.settle_margin > 0.0) {
            return Err(Error::config(key("settle_margin"), "must be > 0"));
        }
        if !(self.setpoint_comm_step > 0.0) {
            return Err(Error::config(key("setpoint_comm_step"), "must be > 0"));
        }
        if !(self.disturbance_comm_step > 0.0) {
            return Err(Error::config(key("disturbance_comm_step"), "must be > 0"));
        }
        if !(self.step_limit > 0.0) {
            return Err(Error::config(key("step_limit"), "must be > 0"));
        }
        self.load.validate(&key("load"))?;
        self.fault.validate(&key("fault"))?;
        if !(self.fault.at_lo >= self.fault.at_hi) {
            return Err(Error::config(
                key("fault.at_lo"),
                "severity must not increase with fault resistance",
            ));
        }
        if !(self.fault_decay_tau > 0.0) {
            return Err(Error::config(key("fault_decay_tau"), "must be > 0"));
        }
        Ok(())
    }

    fn setpoint(&self, kind: ScenarioKind, schedule: SetpointSchedule) -> Scenario {
        Scenario {
            kind,
            duration: schedule.last_time() + self.settle_margin,
            schedule,
            disturbances: Vec::new(),
            comm_step: self.setpoint_comm_step,
        }
    }

    fn disturbance(&self, kind: ScenarioKind, ev: DisturbanceEvent) -> Scenario {
        Scenario {
            kind,
            schedule: SetpointSchedule::constant(1.0),
            duration: ev.start + self.settle_margin,
            disturbances: vec![ev],
            comm_step: self.disturbance_comm_step,
        }
    }

    /// Uniform on `(0, step_limit]`.
    fn draw_target(&self, rng: &mut SimRng) -> f64 {
        let u: f64 = rng.gen();
        self.step_limit * (1.0 - u)
    }

    pub fn gen_step_up(&self, rng: &mut SimRng) -> Scenario {
        let target = self.draw_target(rng);
        self.step_up_to(target, self.event_time)
    }

    pub fn step_up_to(&self, target: f64, at: f64) -> Scenario {
        self.setpoint(ScenarioKind::StepUp, SetpointSchedule::step(0.0, at, target))
    }

    /// From a settled 1.0 pu down to a target uniform on `[0.1, 1.0)`.
    pub fn gen_step_down(&self, rng: &mut SimRng) -> Scenario {
        let target = rng.gen_range(0.1..1.0);
        self.step_down_to(target, self.event_time)
    }

    pub fn step_down_to(&self, target: f64, at: f64) -> Scenario {
        self.setpoint(ScenarioKind::StepDown, SetpointSchedule::step(1.0, at, target))
    }

    pub fn gen_load_energize(&self, rng: &mut SimRng) -> Scenario {
        let mw = self.load.draw(rng);
        self.load_energize(mw, self.event_time)
    }

    pub fn load_energize(&self, mw: f64, at: f64) -> Scenario {
        self.disturbance(
            ScenarioKind::LoadEnergize,
            DisturbanceEvent {
                kind: DisturbanceKind::InputStep,
                start: at,
                magnitude: self.load.map(mw),
                decay_tau: 0.0,
            },
        )
    }

    pub fn gen_fault(&self, rng: &mut SimRng) -> Scenario {
        let ohm = self.fault.draw(rng);
        self.fault(ohm, self.event_time)
    }

    pub fn fault(&self, ohm: f64, at: f64) -> Scenario {
        self.disturbance(
            ScenarioKind::Fault,
            DisturbanceEvent {
                kind: DisturbanceKind::DecayingPulse,
                start: at,
                magnitude: self.fault.map(ohm),
                decay_tau: self.fault_decay_tau,
            },
        )
    }

    pub fn gen_voltage_step(&self, rng: &mut SimRng) -> Scenario {
        let target = self.draw_target(rng);
        self.voltage_step_to(target, self.event_time)
    }

    pub fn voltage_step_to(&self, target: f64, at: f64) -> Scenario {
        self.setpoint(ScenarioKind::VoltageStep, SetpointSchedule::step(0.0, at, target))
    }

    /// Every agent steps from 0 to its own random target at the same instant.
    pub fn gen_multi_step(&self, n_agents: usize, coupling: f64, rng: &mut SimRng) -> MultiAgentScenario {
        let targets: Vec<f64> = (0..n_agents).map(|_| self.draw_target(rng)).collect();
        self.multi_step_to(&targets, self.event_time, coupling)
    }

    pub fn multi_step_to(&self, targets: &[f64], at: f64, coupling: f64) -> MultiAgentScenario {
        MultiAgentScenario {
            agents: targets
                .iter()
                .map(|&x| Scenario {
                    kind: ScenarioKind::MultiAgentStep,
                    ..self.step_up_to(x, at)
                })
                .collect(),
            coupling,
        }
    }

    /// Case 1: 0 -> 1.0 at 0.2 s, then down to 0.2 at 0.25 s.
    pub fn case1(&self) -> Scenario {
        let schedule = SetpointSchedule(vec![
            (0.0, 0.0),
            (CASE_STEP_TIME, 1.0),
            (CASE_SECOND_STEP_TIME, 0.2),
        ]);
        Scenario {
            kind: ScenarioKind::StepUp,
            duration: CASE_SECOND_STEP_TIME + self.settle_margin,
            schedule,
            disturbances: Vec::new(),
            comm_step: self.setpoint_comm_step,
        }
    }

    /// Case 2: both loops 0 -> 1.0 at 0.2 s.
    pub fn case2(&self, coupling: f64) -> MultiAgentScenario {
        self.multi_step_to(&[1.0, 1.0], CASE_STEP_TIME, coupling)
    }

    /// Case 3: 10 MW load at 0.25 s.
    pub fn case3(&self) -> Scenario {
        self.load_energize(self.load.hi, CASE_EVENT_TIME)
    }

    /// Case 4: 0.01 Ω fault at 0.25 s.
    pub fn case4(&self) -> Scenario {
        self.fault(self.fault.lo, CASE_EVENT_TIME)
    }

    /// Case 5: outer reference 0 -> 0.9 at 0.2 s.
    pub fn case5(&self) -> Scenario {
        self.voltage_step_to(CASE5_TARGET, CASE_STEP_TIME)
    }
}
