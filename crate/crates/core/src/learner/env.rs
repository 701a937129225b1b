//! Closed-loop plant episodes for the learner, single and coupled.

use crate::error::{Error, Result};
use crate::mdp::{ActionGrid, AgentModel, DiscreteState, ParadigmRanges, RewardConfig, Successor};
use crate::metrics::{EpisodeTrace, TraceSample};
use crate::modulation::{ModulationDecision, Paradigm};
use crate::scenarios::{MultiAgentScenario, Scenario};
use crate::sim::{sample_count, ClosedLoop, CoupledLoops, LoopSpec, SetpointSchedule, TrackingLoop};

use super::{
    select_action, seeded_rng, AgentRuntime, ConvergenceMonitor, Environment, EpisodeRecord,
    EpisodeSource, SimRng, StepOutcome, TerminalKind, TrainConfig, TrainingReport,
    decision_matrix,
};

/// Everything an agent needs besides its model.
#[derive(Debug, Clone, Copy)]
pub struct AgentSetup {
    pub reward: RewardConfig,
    pub ranges: ParadigmRanges,
    pub terminal_deadband: f64,
}

impl AgentSetup {
    fn runtime(&self, scenario: &Scenario, episodic: bool) -> AgentRuntime {
        let terminal = super::TerminalConfig {
            deadband_fraction: self.terminal_deadband,
            ..super::TerminalConfig::new(scenario.duration)
        };
        AgentRuntime::new(self.reward, self.ranges, terminal, scenario.comm_step, episodic)
    }
}

/// One training episode on a simulated loop. Only activations of `target`
/// are controlled; anything else runs at the nominal set point.
pub struct PlantEpisode {
    plant: Box<dyn TrackingLoop>,
    runtime: AgentRuntime,
    schedule: SetpointSchedule,
    target: Paradigm,
    grid: ActionGrid,
    comm: f64,
    k: usize,
    n: usize,
    current: Option<DiscreteState>,
    samples: Vec<TraceSample>,
    fail_reward: f64,
}

impl PlantEpisode {
    pub fn new(
        spec: &LoopSpec,
        scenario: &Scenario,
        grid: ActionGrid,
        setup: &AgentSetup,
    ) -> Result<Self> {
        let spec = spec.with_comm_step(scenario.comm_step);
        spec.validate()?;
        let plant = spec.build(scenario.schedule.initial(), &scenario.disturbances)?;
        Ok(PlantEpisode {
            plant,
            runtime: setup.runtime(scenario, true),
            schedule: scenario.schedule.clone(),
            target: grid.paradigm,
            grid,
            comm: scenario.comm_step,
            k: 0,
            n: sample_count(scenario.duration, scenario.comm_step),
            current: None,
            samples: Vec::new(),
            fail_reward: setup.reward.fail_reward,
        })
    }

    fn now(&self) -> (f64, f64, f64) {
        let t = self.k as f64 * self.comm;
        (t, self.schedule.value_at(t), self.plant.x())
    }

    fn push(&mut self, t: f64, x_sp: f64, x: f64, d: ModulationDecision) {
        self.samples.push(TraceSample {
            t,
            x_sp,
            x_sp_mod: d.x_sp_mod,
            x,
            e: x_sp - x,
            m: d.m,
            paradigm: d.paradigm,
        });
    }
}

impl Environment for PlantEpisode {
    fn start(&mut self, _rng: &mut SimRng) -> Result<Option<DiscreteState>> {
        while self.k < self.n {
            let (t, x_sp, x) = self.now();
            let obs = self.runtime.observe(t, x_sp, x);
            if self.runtime.activation_paradigm() == Some(self.target) {
                if let Some(s) = obs.decision {
                    self.current = Some(s);
                    return Ok(Some(s));
                }
                if obs.kind.is_terminal() {
                    return Ok(None);
                }
            }
            let d = self.runtime.passive(x_sp);
            self.push(t, x_sp, x, d);
            self.plant.advance_comm(d.x_sp_mod)?;
            self.k += 1;
        }
        Ok(None)
    }

    fn step(&mut self, action: usize, _rng: &mut SimRng) -> Result<StepOutcome> {
        let s = self
            .current
            .take()
            .ok_or_else(|| Error::config("episode", "step() without a pending decision"))?;
        let (t, x_sp, x) = self.now();
        let d = self.runtime.act(s, &self.grid, action, x_sp)?;
        self.push(t, x_sp, x, d);
        match self.plant.advance_comm(d.x_sp_mod) {
            Ok(()) => {}
            Err(Error::NumericBlowUp { .. }) => {
                let r = self
                    .runtime
                    .diverge()
                    .map_or(self.fail_reward, |tr| tr.reward);
                return Ok(StepOutcome {
                    reward: r,
                    next: Successor::Terminal,
                    kind: TerminalKind::Diverged,
                });
            }
            Err(e) => return Err(e),
        }
        self.k += 1;
        if self.k >= self.n {
            return Ok(StepOutcome {
                reward: 0.0,
                next: Successor::Terminal,
                kind: TerminalKind::TimeUp,
            });
        }
        let (t, x_sp, x) = self.now();
        let obs = self.runtime.observe(t, x_sp, x);
        let tr = obs
            .transition
            .ok_or_else(|| Error::config("episode", "acted without a resolved transition"))?;
        let kind = match tr.next {
            Successor::State(next) => {
                self.current = Some(next);
                TerminalKind::Continue
            }
            // interrupted by a new command: no future value, counted as a time-out
            Successor::Terminal if !obs.kind.is_terminal() => TerminalKind::TimeUp,
            Successor::Terminal => obs.kind,
        };
        Ok(StepOutcome {
            reward: tr.reward,
            next: tr.next,
            kind,
        })
    }

    fn trace(&self) -> EpisodeTrace {
        EpisodeTrace::new(self.samples.clone())
    }
}

/// Fresh scenario per episode from a generator, all on one loop structure.
pub struct PlantSource<G> {
    spec: LoopSpec,
    grid: ActionGrid,
    setup: AgentSetup,
    gen: G,
}

impl<G: FnMut(&mut SimRng) -> Scenario> PlantSource<G> {
    pub fn new(spec: LoopSpec, paradigm: Paradigm, setup: AgentSetup, gen: G) -> Result<Self> {
        Ok(PlantSource {
            spec,
            grid: ActionGrid::for_paradigm(paradigm)?,
            setup,
            gen,
        })
    }
}

impl<G: FnMut(&mut SimRng) -> Scenario> EpisodeSource for PlantSource<G> {
    fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    fn next_episode(&mut self, rng: &mut SimRng) -> Result<Box<dyn Environment + '_>> {
        let scenario = (self.gen)(rng);
        Ok(Box::new(PlantEpisode::new(
            &self.spec,
            &scenario,
            self.grid.clone(),
            &self.setup,
        )?))
    }
}

/// Per-agent bookkeeping inside a coupled episode.
struct CoupledAgent<'a> {
    model: &'a mut AgentModel,
    runtime: AgentRuntime,
    done: bool,
    ret: f64,
    steps: usize,
    explored: usize,
    kind: TerminalKind,
}

/// Train one independent model per loop on coupled multi-agent episodes.
///
/// All loops step in lockstep; each agent controls only activations of its
/// grid's paradigm and learns from its own rewards.
pub fn train_coupled<G: FnMut(&mut SimRng) -> MultiAgentScenario>(
    models: &mut [AgentModel],
    loops: &[(crate::sim::PlantConfig, crate::sim::PiGains)],
    grid: &ActionGrid,
    setups: &[AgentSetup],
    cfg: &TrainConfig,
    mut gen: G,
) -> Result<Vec<TrainingReport>> {
    cfg.validate("train")?;
    if models.len() != loops.len() || setups.len() != loops.len() {
        return Err(Error::config("agents", "one model, loop and setup per agent"));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut monitors: Vec<ConvergenceMonitor> = models
        .iter()
        .map(|_| ConvergenceMonitor::new(cfg.convergence_window))
        .collect();
    let mut records: Vec<Vec<EpisodeRecord>> = vec![Vec::new(); models.len()];
    let mut converged_after = None;

    for ep in 0..cfg.n_episodes {
        let epsilon = cfg.epsilon(ep);
        let scenario = gen(&mut rng);
        if scenario.agents.len() != models.len() {
            return Err(Error::config("scenario.agents", "agent count differs from models"));
        }
        let comm = scenario.agents[0].comm_step;
        let built: Result<Vec<ClosedLoop>> = loops
            .iter()
            .zip(&scenario.agents)
            .map(|((plant, gains), sc)| {
                ClosedLoop::new(
                    plant.with_comm_step(comm),
                    *gains,
                    sc.schedule.initial(),
                    sc.disturbances.clone(),
                )
            })
            .collect();
        let mut plant = CoupledLoops::new(built?, scenario.coupling)?;
        let mut agents: Vec<CoupledAgent> = models
            .iter_mut()
            .zip(setups.iter().zip(&scenario.agents))
            .map(|(model, (setup, sc))| CoupledAgent {
                model,
                runtime: setup.runtime(sc, true),
                done: false,
                ret: 0.0,
                steps: 0,
                explored: 0,
                kind: TerminalKind::TimeUp,
            })
            .collect();

        let n = sample_count(scenario.duration(), comm);
        let mut sp = vec![0.0; agents.len()];
        let mut sp_mod = vec![0.0; agents.len()];
        for k in 0..n {
            let t = k as f64 * comm;
            for (i, ag) in agents.iter_mut().enumerate() {
                let x_sp = scenario.agents[i].schedule.value_at(t);
                sp[i] = x_sp;
                sp_mod[i] = x_sp;
                if ag.done {
                    continue;
                }
                let obs = ag.runtime.observe(t, x_sp, plant.x(i));
                if let Some(tr) = obs.transition {
                    if tr.paradigm == grid.paradigm {
                        ag.model.record_transition(tr.state, tr.action, tr.next, tr.reward);
                        ag.model.q_backup(tr.state, tr.action)?;
                        ag.ret += tr.reward;
                        ag.steps += 1;
                    }
                }
                let mine = ag.runtime.activation_paradigm() == Some(grid.paradigm);
                if mine && obs.kind.is_terminal() {
                    ag.done = true;
                    ag.kind = obs.kind;
                    continue;
                }
                let d = match (mine, obs.decision) {
                    (true, Some(s)) => {
                        let a = select_action(ag.model, s, grid, epsilon, &mut rng);
                        if a != ag.model.greedy_action(s) {
                            ag.explored += 1;
                        }
                        ag.runtime.act(s, grid, a, x_sp)?
                    }
                    _ => ag.runtime.passive(x_sp),
                };
                sp_mod[i] = d.x_sp_mod;
            }
            if agents.iter().all(|a| a.done) || k + 1 == n {
                break;
            }
            if let Err(e) = plant.advance_comm(&sp_mod, &sp) {
                if !matches!(e, Error::NumericBlowUp { .. }) {
                    return Err(e);
                }
                for ag in agents.iter_mut().filter(|a| !a.done) {
                    if let Some(tr) = ag.runtime.diverge() {
                        ag.model.record_transition(tr.state, tr.action, tr.next, tr.reward);
                        ag.model.q_backup(tr.state, tr.action)?;
                        ag.ret += tr.reward;
                        ag.steps += 1;
                    }
                    ag.done = true;
                    ag.kind = TerminalKind::Diverged;
                }
                break;
            }
        }

        let mut all_converged = true;
        for (i, ag) in agents.iter().enumerate() {
            let (changes, converged) = monitors[i].update(decision_matrix(ag.model, grid));
            all_converged &= converged;
            records[i].push(EpisodeRecord {
                episode: ep,
                epsilon,
                ret: ag.ret,
                kind: ag.kind,
                steps: ag.steps,
                explored: ag.explored,
                matrix_changes: changes,
            });
        }
        if all_converged {
            converged_after = Some(ep + 1);
            break;
        }
    }
    Ok(records
        .into_iter()
        .map(|episodes| TrainingReport {
            paradigm: grid.paradigm,
            episodes,
            converged_after,
        })
        .collect())
}
