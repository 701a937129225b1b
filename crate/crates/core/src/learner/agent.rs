//! Per-loop agent runtime shared by training and frozen-policy evaluation.
//!
//! Each communication step the runtime updates the secondary logic, turns the
//! nominal error into a discrete state, resolves the reward of the previous
//! action, and classifies terminal conditions. An activation (one latched
//! paradigm) is one training episode.
//!
//! The agent acts from the first sample of an activation. Until the error
//! has entered the survival band (a step starts far outside it) the reward is
//! the plain tracking penalty; afterwards leaving the band ends the episode
//! with the fail reward.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{
    discretize_with, tracking_penalty, ActionGrid, AgentModel, DiscreteState, ParadigmRanges, RewardConfig,
    Successor,
};
use crate::modulation::{
    apply_modulation, deadband, ModulationDecision, Paradigm, SecondaryLogic, SETTLE_SAMPLES,
};
use crate::sim::Supplementary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalKind {
    Continue,
    SettledOk,
    BandViolation,
    TimeUp,
    /// The plant produced non-finite values.
    Diverged,
}

impl TerminalKind {
    pub fn is_terminal(self) -> bool {
        self != TerminalKind::Continue
    }

    pub fn name(self) -> &'static str {
        match self {
            TerminalKind::Continue => "continue",
            TerminalKind::SettledOk => "settled",
            TerminalKind::BandViolation => "band-violation",
            TerminalKind::TimeUp => "time-up",
            TerminalKind::Diverged => "diverged",
        }
    }
}

/// Terminal-state settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalConfig {
    /// Settling deadband as a fraction of `max(|x_sp|, 0.1)`.
    pub deadband_fraction: f64,
    /// Consecutive in-deadband samples that count as settled.
    pub settle_samples: usize,
    /// Simulation end (s).
    pub duration: f64,
}

impl TerminalConfig {
    pub fn new(duration: f64) -> Self {
        TerminalConfig {
            deadband_fraction: 0.01,
            settle_samples: SETTLE_SAMPLES,
            duration,
        }
    }

    pub fn deadband(&self, x_sp: f64) -> f64 {
        deadband(x_sp) * (self.deadband_fraction / 0.01)
    }
}

/// Stateful terminal classifier for one episode.
///
/// The survival band is armed once the error has been inside it; a step
/// response starts far outside the band and only counts as a violation if it
/// leaves the band again.
#[derive(Debug, Clone)]
pub struct TerminalMonitor {
    cfg: TerminalConfig,
    reward: RewardConfig,
    armed: bool,
    settled_run: usize,
}

impl TerminalMonitor {
    pub fn new(cfg: TerminalConfig, reward: RewardConfig) -> Self {
        TerminalMonitor {
            cfg,
            reward,
            armed: false,
            settled_run: 0,
        }
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    /// Classify the sample `(e, x_sp)` taken at time `t`.
    pub fn is_terminal(&mut self, e: f64, x_sp: f64, t: f64) -> TerminalKind {
        let band = self.reward.band(x_sp);
        if e.abs() <= band {
            self.armed = true;
        } else if self.armed {
            return TerminalKind::BandViolation;
        }
        if e.abs() <= self.cfg.deadband(x_sp) {
            self.settled_run += 1;
        } else {
            self.settled_run = 0;
        }
        if self.settled_run >= self.cfg.settle_samples {
            TerminalKind::SettledOk
        } else if t >= self.cfg.duration - 1e-9 {
            TerminalKind::TimeUp
        } else {
            TerminalKind::Continue
        }
    }
}

/// Learned models for the three active paradigms; any may be absent.
#[derive(Debug, Clone, Default)]
pub struct PolicySet {
    pub increase: Option<AgentModel>,
    pub decrease: Option<AgentModel>,
    pub disturbance: Option<AgentModel>,
}

impl PolicySet {
    pub fn get(&self, p: Paradigm) -> Option<&AgentModel> {
        match p {
            Paradigm::IncreaseTracking => self.increase.as_ref(),
            Paradigm::DecreaseTracking => self.decrease.as_ref(),
            Paradigm::DisturbanceRejection => self.disturbance.as_ref(),
            Paradigm::Idle => None,
        }
    }

    pub fn get_mut(&mut self, p: Paradigm) -> Option<&mut AgentModel> {
        match p {
            Paradigm::IncreaseTracking => self.increase.as_mut(),
            Paradigm::DecreaseTracking => self.decrease.as_mut(),
            Paradigm::DisturbanceRejection => self.disturbance.as_mut(),
            Paradigm::Idle => None,
        }
    }

    pub fn set(&mut self, p: Paradigm, model: AgentModel) {
        match p {
            Paradigm::IncreaseTracking => self.increase = Some(model),
            Paradigm::DecreaseTracking => self.decrease = Some(model),
            Paradigm::DisturbanceRejection => self.disturbance = Some(model),
            Paradigm::Idle => {}
        }
    }

    pub fn paradigms(&self) -> Vec<Paradigm> {
        Paradigm::ACTIVE
            .into_iter()
            .filter(|p| self.get(*p).is_some())
            .collect()
    }
}

/// A transition resolved this step, ready for the model update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub paradigm: Paradigm,
    pub state: DiscreteState,
    pub action: usize,
    pub next: Successor,
    pub reward: f64,
}

/// What the runtime saw at one communication step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub paradigm: Paradigm,
    /// Set when the agent must choose an action this step.
    pub decision: Option<DiscreteState>,
    pub transition: Option<Transition>,
    /// Terminal classification of the current activation.
    pub kind: TerminalKind,
}

#[derive(Debug, Clone)]
struct Activation {
    paradigm: Paradigm,
    monitor: TerminalMonitor,
    e_prev: Option<f64>,
    m_prev: f64,
    pending: Option<(DiscreteState, usize, f64)>,
    kind: TerminalKind,
    x_sp: f64,
}

/// Per-loop agent state machine.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    logic: SecondaryLogic,
    reward: RewardConfig,
    ranges: ParadigmRanges,
    terminal: TerminalConfig,
    comm_step: f64,
    active: Option<Activation>,
    /// Whether band violations and time-outs end the activation (training)
    /// or are ignored (evaluation).
    episodic: bool,
}

impl AgentRuntime {
    pub fn new(
        reward: RewardConfig,
        ranges: ParadigmRanges,
        terminal: TerminalConfig,
        comm_step: f64,
        episodic: bool,
    ) -> Self {
        AgentRuntime {
            logic: SecondaryLogic::new(),
            reward,
            ranges,
            terminal,
            comm_step,
            active: None,
            episodic,
        }
    }

    pub fn paradigm(&self) -> Paradigm {
        self.logic.paradigm()
    }

    /// Terminal kind of the current activation, `Continue` while none is running.
    pub fn activation_kind(&self) -> TerminalKind {
        self.active.as_ref().map_or(TerminalKind::Continue, |a| a.kind)
    }

    pub fn activation_paradigm(&self) -> Option<Paradigm> {
        self.active.as_ref().map(|a| a.paradigm)
    }

    pub fn observe(&mut self, t: f64, x_sp: f64, x: f64) -> Observation {
        let e = x_sp - x;
        let prev_paradigm = self.logic.paradigm();
        let paradigm = self.logic.update(x_sp, e);
        let restart = paradigm != Paradigm::Idle
            && (paradigm != prev_paradigm || self.logic.command_changed());

        let mut transition = None;
        if restart {
            // an interrupted episode ends without future value
            if let Some(act) = self.active.take() {
                if let Some((s, a, dm)) = act.pending {
                    if act.kind == TerminalKind::Continue {
                        transition = Some(Transition {
                            paradigm: act.paradigm,
                            state: s,
                            action: a,
                            next: Successor::Terminal,
                            reward: tracking_penalty(act.x_sp - x, dm, &self.reward),
                        });
                    }
                }
            }
            self.active = Some(Activation {
                paradigm,
                monitor: TerminalMonitor::new(self.terminal, self.reward),
                e_prev: None,
                m_prev: 0.0,
                pending: None,
                kind: TerminalKind::Continue,
                x_sp,
            });
        }

        let comm = self.comm_step;
        let episodic = self.episodic;
        let Some(act) = self.active.as_mut() else {
            return Observation {
                paradigm,
                decision: None,
                transition,
                kind: TerminalKind::Continue,
            };
        };
        if act.kind.is_terminal() {
            return Observation {
                paradigm,
                decision: None,
                transition,
                kind: act.kind,
            };
        }

        let edot = act.e_prev.map_or(0.0, |ep| (e - ep) / comm);
        act.e_prev = Some(e);
        act.x_sp = x_sp;
        let mut kind = act.monitor.is_terminal(e, x_sp, t);
        if !episodic && kind != TerminalKind::SettledOk {
            kind = TerminalKind::Continue;
        }
        if paradigm == Paradigm::Idle && !kind.is_terminal() {
            // the secondary logic released the latch
            kind = TerminalKind::SettledOk;
        }
        act.kind = kind;
        let act_paradigm = act.paradigm;
        let pending = act.pending.take();

        let state = (!kind.is_terminal())
            .then(|| state_for(&self.ranges, &self.reward, act_paradigm, e, edot, x_sp));

        if let Some((s, a, dm)) = pending {
            let r = if kind == TerminalKind::BandViolation {
                self.reward.fail_reward
            } else {
                tracking_penalty(e, dm, &self.reward)
            };
            let next = match (kind.is_terminal(), state) {
                (false, Some(s2)) => Successor::State(s2),
                _ => Successor::Terminal,
            };
            transition = Some(Transition {
                paradigm: act_paradigm,
                state: s,
                action: a,
                next,
                reward: r,
            });
        }

        Observation {
            paradigm,
            decision: state,
            transition,
            kind,
        }
    }

    /// Apply `action` from `grid` at the state returned by the last
    /// [`AgentRuntime::observe`].
    pub fn act(&mut self, state: DiscreteState, grid: &ActionGrid, action: usize, x_sp: f64) -> Result<ModulationDecision> {
        let act = self
            .active
            .as_mut()
            .expect("act() called without an active paradigm");
        let m = grid.m(action);
        let x_sp_mod = apply_modulation(m, x_sp, act.paradigm)?;
        act.pending = Some((state, action, m - act.m_prev));
        act.m_prev = m;
        Ok(ModulationDecision {
            m,
            x_sp_mod,
            paradigm: act.paradigm,
        })
    }

    /// Decision when the agent does not act: nominal set point.
    pub fn passive(&mut self, x_sp: f64) -> ModulationDecision {
        let paradigm = self.logic.paradigm();
        if let Some(act) = self.active.as_mut() {
            act.m_prev = 0.0;
        }
        ModulationDecision {
            m: 0.0,
            x_sp_mod: x_sp,
            paradigm,
        }
    }

    /// Mark the current activation as diverged; returns the pending transition.
    pub fn diverge(&mut self) -> Option<Transition> {
        let fail = self.reward.fail_reward;
        let act = self.active.as_mut()?;
        act.kind = TerminalKind::Diverged;
        act.pending.take().map(|(s, a, _)| Transition {
            paradigm: act.paradigm,
            state: s,
            action: a,
            next: Successor::Terminal,
            reward: fail,
        })
    }
}

/// Error and error rate normalized by the set-point basis, then binned.
fn state_for(
    ranges: &ParadigmRanges,
    rw: &RewardConfig,
    paradigm: Paradigm,
    e: f64,
    edot: f64,
    x_sp: f64,
) -> DiscreteState {
    let basis = rw.basis(x_sp);
    let r = ranges.get(paradigm).expect("active paradigm has ranges");
    discretize_with(e / basis, edot / basis, r)
}

/// Frozen greedy policy used as a supplementary controller.
#[derive(Debug, Clone)]
pub struct RlController {
    runtime: AgentRuntime,
    policies: PolicySet,
    grids: [ActionGrid; 3],
}

impl RlController {
    pub fn new(
        policies: PolicySet,
        reward: RewardConfig,
        ranges: ParadigmRanges,
        comm_step: f64,
    ) -> Self {
        RlController {
            runtime: AgentRuntime::new(
                reward,
                ranges,
                TerminalConfig::new(f64::INFINITY),
                comm_step,
                false,
            ),
            policies,
            grids: Paradigm::ACTIVE.map(|p| ActionGrid::for_paradigm(p).expect("active paradigm")),
        }
    }
}

impl Supplementary for RlController {
    fn decide(&mut self, t: f64, x_sp: f64, x: f64) -> ModulationDecision {
        let obs = self.runtime.observe(t, x_sp, x);
        if let (Some(s), Some(p)) = (obs.decision, self.runtime.activation_paradigm()) {
            if let Some(model) = self.policies.get(p) {
                let grid = &self.grids[p.index()];
                let a = model.greedy_action(s);
                if let Ok(d) = self.runtime.act(s, grid, a, x_sp) {
                    return d;
                }
            }
        }
        self.runtime.passive(x_sp)
    }
}
