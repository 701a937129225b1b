//! Discrete-time PI-controlled tracking loops.
//!
//! The plant is a first-order lag with optional actuation delay, integrated
//! with forward Euler at `sim_step`. A supplementary controller sees the loop
//! once per `comm_step` and holds its modulated set point in between.
//!
//! [`ClosedLoop`] is the single-loop stand-in for an inverter current loop and
//! [`NestedLoop`] adds an outer voltage-like loop around it. Both implement
//! [`TrackingLoop`], which is what the episode runner and the learner drive.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EpisodeTrace, TraceSample};
use crate::modulation::ModulationDecision;

/// Relative slack when comparing event times against the sample grid.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp: f64,
    /// Integral gain in 1/s.
    pub ki: f64,
}

impl PiGains {
    pub fn new(kp: f64, ki: f64) -> Result<Self> {
        let g = PiGains { kp, ki };
        g.validate("gains")?;
        Ok(g)
    }

    /// Gains whose integral term is quoted per `time_base` seconds rather than
    /// per second. `ki / time_base` becomes the per-second gain.
    pub fn with_time_base(kp: f64, ki: f64, time_base: f64) -> Result<Self> {
        if !(time_base > 0.0) {
            return Err(Error::config("gains.time_base", "must be > 0"));
        }
        PiGains::new(kp, ki / time_base)
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        if !(self.kp > 0.0) || !self.kp.is_finite() {
            return Err(Error::config(format!("{section}.kp"), "must be > 0"));
        }
        if !(self.ki >= 0.0) || !self.ki.is_finite() {
            return Err(Error::config(format!("{section}.ki"), "must be >= 0"));
        }
        Ok(())
    }
}

/// One PI update: `integ' = integ + e*h`, `u = kp*e + ki*integ'`.
pub fn step_pi(gains: PiGains, e: f64, integ: f64, h: f64) -> (f64, f64) {
    let integ = integ + e * h;
    (gains.kp * e + gains.ki * integ, integ)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// DC gain K.
    pub gain: f64,
    /// Time constant in seconds.
    pub tau: f64,
    /// Actuation delay in simulation steps.
    pub delay_steps: usize,
    pub sim_step: f64,
    pub comm_step: f64,
}

impl PlantConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        let key = |f: &str| format!("{section}.{f}");
        if !self.gain.is_finite() || self.gain == 0.0 {
            return Err(Error::config(key("gain"), "must be finite and nonzero"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(key("tau"), "must be > 0"));
        }
        if !(self.sim_step > 0.0) {
            return Err(Error::config(key("sim_step"), "must be > 0"));
        }
        if self.sim_step > self.tau / 10.0 {
            return Err(Error::config(
                key("sim_step"),
                format!("must be <= tau/10 = {}", self.tau / 10.0),
            ));
        }
        if !(self.comm_step > 0.0) || substeps(self.comm_step, self.sim_step).is_none() {
            return Err(Error::config(
                key("comm_step"),
                "must be a positive integer multiple of sim_step",
            ));
        }
        Ok(())
    }

    /// Simulation steps per communication interval.
    pub fn substeps(&self) -> usize {
        substeps(self.comm_step, self.sim_step).unwrap_or(1)
    }

    pub fn with_comm_step(mut self, comm_step: f64) -> Self {
        self.comm_step = comm_step;
        self
    }
}

fn substeps(comm: f64, sim: f64) -> Option<usize> {
    let r = comm / sim;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() <= 1e-6 * n {
        Some(n as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    /// Tracked (measured) variable.
    pub x: f64,
    pub integ: f64,
    /// Pending actuation, oldest first. Length is always `delay_steps`.
    pub u_queue: VecDeque<f64>,
    pub t: f64,
    /// Sustained output offset currently superimposed on `x`.
    pub out_offset: f64,
}

impl LoopState {
    /// Steady state with `x` resting at `x_eq` under integral action.
    pub fn at_equilibrium(cfg: &PlantConfig, gains: PiGains, x_eq: f64) -> Self {
        let u = x_eq / cfg.gain;
        let integ = if gains.ki > 0.0 { u / gains.ki } else { 0.0 };
        LoopState {
            x: x_eq,
            integ,
            u_queue: std::iter::repeat_n(u, cfg.delay_steps).collect(),
            t: 0.0,
            out_offset: 0.0,
        }
    }

    pub fn zero(cfg: &PlantConfig) -> Self {
        LoopState {
            x: 0.0,
            integ: 0.0,
            u_queue: std::iter::repeat_n(0.0, cfg.delay_steps).collect(),
            t: 0.0,
            out_offset: 0.0,
        }
    }

    /// In-place form of [`step_plant`].
    pub fn advance(&mut self, cfg: &PlantConfig, u: f64, inj: Injection) -> Result<()> {
        if !u.is_finite() {
            return Err(Error::NumericBlowUp {
                t: self.t,
                what: "plant input",
            });
        }
        let u_applied = if cfg.delay_steps == 0 {
            u
        } else {
            self.u_queue.push_back(u);
            self.u_queue.pop_front().unwrap_or(u)
        };
        let xp = self.x - self.out_offset;
        let xp = xp + cfg.sim_step * (cfg.gain * (u_applied + inj.input) - xp) / cfg.tau;
        let x = xp + inj.output;
        if !x.is_finite() {
            return Err(Error::NumericBlowUp {
                t: self.t,
                what: "plant output",
            });
        }
        self.x = x;
        self.out_offset = inj.output;
        self.t += cfg.sim_step;
        Ok(())
    }
}

/// Disturbance contribution for one simulation step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Injection {
    /// Added to the plant input (after the delay line).
    pub input: f64,
    /// Sustained offset on the measured output.
    pub output: f64,
}

/// Explicit first-order plant update with the actuation delay line.
pub fn step_plant(cfg: &PlantConfig, state: &LoopState, u: f64, inj: Injection) -> Result<LoopState> {
    let mut next = state.clone();
    next.advance(cfg, u, inj)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceKind {
    /// Sustained additive offset on the output.
    OutputStep,
    /// Sustained additive offset on the plant input.
    InputStep,
    /// Exponentially decaying additive pulse on the plant input.
    DecayingPulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent {
    pub kind: DisturbanceKind,
    pub start: f64,
    pub magnitude: f64,
    #[serde(default)]
    pub decay_tau: f64,
}

impl DisturbanceEvent {
    pub fn validate(&self, key: &str) -> Result<()> {
        if !(self.start >= 0.0) {
            return Err(Error::config(format!("{key}.start"), "must be >= 0"));
        }
        if !self.magnitude.is_finite() {
            return Err(Error::config(format!("{key}.magnitude"), "must be finite"));
        }
        if self.kind == DisturbanceKind::DecayingPulse && !(self.decay_tau > 0.0) {
            return Err(Error::config(
                format!("{key}.decay_tau"),
                "must be > 0 for a decaying pulse",
            ));
        }
        Ok(())
    }

    fn contribute(&self, t: f64, inj: &mut Injection) {
        if t < self.start - TIME_EPS {
            return;
        }
        match self.kind {
            DisturbanceKind::OutputStep => inj.output += self.magnitude,
            DisturbanceKind::InputStep => inj.input += self.magnitude,
            DisturbanceKind::DecayingPulse => {
                inj.input += self.magnitude * (-(t - self.start).max(0.0) / self.decay_tau).exp()
            }
        }
    }
}

pub fn injection_at(events: &[DisturbanceEvent], t: f64) -> Injection {
    let mut inj = Injection::default();
    for ev in events {
        ev.contribute(t, &mut inj);
    }
    inj
}

/// Piecewise-constant nominal set point from the secondary controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointSchedule(pub Vec<(f64, f64)>);

impl SetpointSchedule {
    pub fn constant(value: f64) -> Self {
        SetpointSchedule(vec![(0.0, value)])
    }

    pub fn step(initial: f64, at: f64, value: f64) -> Self {
        SetpointSchedule(vec![(0.0, initial), (at, value)])
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::config(key, "schedule is empty"));
        }
        if self.0.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::config(key, "times must be strictly increasing"));
        }
        if self.0.iter().any(|&(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::config(key, "non-finite entry"));
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let mut v = self.0.first().map(|p| p.1).unwrap_or(0.0);
        for &(at, val) in &self.0 {
            if t >= at - TIME_EPS {
                v = val;
            } else {
                break;
            }
        }
        v
    }

    pub fn initial(&self) -> f64 {
        self.value_at(0.0)
    }

    /// Times at which the value changes, excluding the initial entry.
    pub fn change_times(&self) -> Vec<f64> {
        self.0
            .windows(2)
            .filter(|w| w[1].1 != w[0].1)
            .map(|w| w[1].0)
            .collect()
    }

    pub fn last_time(&self) -> f64 {
        self.0.last().map(|p| p.0).unwrap_or(0.0)
    }
}

/// A loop the supplementary controller can drive one communication step at a time.
pub trait TrackingLoop {
    fn x(&self) -> f64;
    fn comm_step(&self) -> f64;
    /// Advance one communication interval with the modulated set point held.
    fn advance_comm(&mut self, x_sp_mod: f64) -> Result<()>;
}

/// The per-comm-step supplementary controller hook.
pub trait Supplementary {
    fn decide(&mut self, t: f64, x_sp: f64, x: f64) -> ModulationDecision;
}

/// Pass-through hook: the primary controller sees the nominal set point.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passthrough;

impl Supplementary for Passthrough {
    fn decide(&mut self, _t: f64, x_sp: f64, _x: f64) -> ModulationDecision {
        ModulationDecision::idle(x_sp)
    }
}

/// Single PI loop around the first-order plant.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    cfg: PlantConfig,
    gains: PiGains,
    state: LoopState,
    events: Vec<DisturbanceEvent>,
    steps: u64,
    n_sub: usize,
}

impl ClosedLoop {
    pub fn new(
        cfg: PlantConfig,
        gains: PiGains,
        x0: f64,
        events: Vec<DisturbanceEvent>,
    ) -> Result<Self> {
        cfg.validate("plant")?;
        gains.validate("gains")?;
        for (i, ev) in events.iter().enumerate() {
            ev.validate(&format!("disturbances[{i}]"))?;
        }
        let state = if x0 == 0.0 {
            LoopState::zero(&cfg)
        } else {
            LoopState::at_equilibrium(&cfg, gains, x0)
        };
        Ok(ClosedLoop {
            n_sub: cfg.substeps(),
            cfg,
            gains,
            state,
            events,
            steps: 0,
        })
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn substeps_per_comm(&self) -> usize {
        self.n_sub
    }

    /// Exact simulation time of the current step.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.cfg.sim_step
    }

    /// One simulation step. `extra_output` is superimposed on the output on
    /// top of the scheduled disturbances (used for inter-loop coupling).
    pub fn substep(&mut self, x_sp_mod: f64, extra_output: f64) -> Result<()> {
        let mut inj = injection_at(&self.events, self.time());
        inj.output += extra_output;
        let e = x_sp_mod - self.state.x;
        let (u, integ) = step_pi(self.gains, e, self.state.integ, self.cfg.sim_step);
        self.state.integ = integ;
        self.state.advance(&self.cfg, u, inj)?;
        self.steps += 1;
        Ok(())
    }
}

impl TrackingLoop for ClosedLoop {
    fn x(&self) -> f64 {
        self.state.x
    }

    fn comm_step(&self) -> f64 {
        self.cfg.comm_step
    }

    fn advance_comm(&mut self, x_sp_mod: f64) -> Result<()> {
        for _ in 0..self.n_sub {
            self.substep(x_sp_mod, 0.0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestedLoopConfig {
    pub outer_gains: PiGains,
    /// Outer plant time constant (s).
    pub outer_tau: f64,
    /// Outer plant gain from inner variable to outer variable.
    #[serde(default = "one")]
    pub outer_gain: f64,
    pub inner: PlantConfig,
    pub inner_gains: PiGains,
    /// Clamp on the inner-loop reference produced by the outer PI.
    pub outer_ref_limit: f64,
}

fn one() -> f64 {
    1.0
}

impl NestedLoopConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        self.inner.validate(&format!("{section}.inner"))?;
        self.inner_gains.validate(&format!("{section}.inner_gains"))?;
        self.outer_gains.validate(&format!("{section}.outer_gains"))?;
        if !(self.outer_tau > 0.0) {
            return Err(Error::config(format!("{section}.outer_tau"), "must be > 0"));
        }
        if self.inner.sim_step > self.outer_tau / 10.0 {
            return Err(Error::config(
                format!("{section}.inner.sim_step"),
                "must be <= outer_tau/10",
            ));
        }
        if !(self.outer_ref_limit > 0.0) {
            return Err(Error::config(
                format!("{section}.outer_ref_limit"),
                "must be > 0",
            ));
        }
        if !self.outer_gain.is_finite() || self.outer_gain == 0.0 {
            return Err(Error::config(format!("{section}.outer_gain"), "must be nonzero"));
        }
        Ok(())
    }
}

/// Outer PI loop whose (clamped) output is the reference of an inner [`ClosedLoop`].
#[derive(Debug, Clone)]
pub struct NestedLoop {
    cfg: NestedLoopConfig,
    v: f64,
    outer_integ: f64,
    inner: ClosedLoop,
    inner_ref: f64,
    events: Vec<DisturbanceEvent>,
}

impl NestedLoop {
    pub fn new(cfg: NestedLoopConfig, v0: f64, events: Vec<DisturbanceEvent>) -> Result<Self> {
        cfg.validate("nested")?;
        for (i, ev) in events.iter().enumerate() {
            ev.validate(&format!("disturbances[{i}]"))?;
        }
        let i0 = v0 / cfg.outer_gain;
        let outer_integ = if cfg.outer_gains.ki > 0.0 {
            i0 / cfg.outer_gains.ki
        } else {
            0.0
        };
        Ok(NestedLoop {
            inner: ClosedLoop::new(cfg.inner, cfg.inner_gains, i0, Vec::new())?,
            cfg,
            v: v0,
            outer_integ,
            inner_ref: i0,
            events,
        })
    }

    /// Inner-loop tracking error `i_ref - i` at the current instant.
    pub fn inner_error(&self) -> f64 {
        self.inner_ref - self.inner.x()
    }

    pub fn inner_x(&self) -> f64 {
        self.inner.x()
    }

    fn substep(&mut self, v_ref: f64) -> Result<()> {
        let h = self.cfg.inner.sim_step;
        let t = self.inner.time();
        let inj = injection_at(&self.events, t);
        let (u, integ) = step_pi(self.cfg.outer_gains, v_ref - self.v, self.outer_integ, h);
        self.outer_integ = integ;
        let lim = self.cfg.outer_ref_limit;
        self.inner_ref = u.clamp(-lim, lim);
        let i = self.inner.x();
        self.inner.substep(self.inner_ref, 0.0)?;
        let v = self.v - inj.output;
        let v = v + h * (self.cfg.outer_gain * (i + inj.input) - v) / self.cfg.outer_tau;
        let v = v + inj.output;
        if !v.is_finite() {
            return Err(Error::NumericBlowUp {
                t,
                what: "outer loop output",
            });
        }
        self.v = v;
        Ok(())
    }
}

impl TrackingLoop for NestedLoop {
    fn x(&self) -> f64 {
        self.v
    }

    fn comm_step(&self) -> f64 {
        self.cfg.inner.comm_step
    }

    fn advance_comm(&mut self, x_sp_mod: f64) -> Result<()> {
        for _ in 0..self.inner.substeps_per_comm() {
            self.substep(x_sp_mod)?;
        }
        Ok(())
    }
}

/// Which loop structure a scenario runs on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LoopSpec {
    Single { plant: PlantConfig, gains: PiGains },
    Nested(NestedLoopConfig),
}

impl LoopSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LoopSpec::Single { plant, gains } => {
                plant.validate("plant")?;
                gains.validate("gains")
            }
            LoopSpec::Nested(cfg) => cfg.validate("nested"),
        }
    }

    pub fn comm_step(&self) -> f64 {
        match self {
            LoopSpec::Single { plant, .. } => plant.comm_step,
            LoopSpec::Nested(cfg) => cfg.inner.comm_step,
        }
    }

    pub fn sim_step(&self) -> f64 {
        match self {
            LoopSpec::Single { plant, .. } => plant.sim_step,
            LoopSpec::Nested(cfg) => cfg.inner.sim_step,
        }
    }

    pub fn with_comm_step(mut self, comm_step: f64) -> Self {
        match &mut self {
            LoopSpec::Single { plant, .. } => plant.comm_step = comm_step,
            LoopSpec::Nested(cfg) => cfg.inner.comm_step = comm_step,
        }
        self
    }

    pub fn build(&self, x0: f64, events: &[DisturbanceEvent]) -> Result<Box<dyn TrackingLoop>> {
        Ok(match self {
            LoopSpec::Single { plant, gains } => {
                Box::new(ClosedLoop::new(*plant, *gains, x0, events.to_vec())?)
            }
            LoopSpec::Nested(cfg) => Box::new(NestedLoop::new(*cfg, x0, events.to_vec())?),
        })
    }
}

impl<T: TrackingLoop + ?Sized> TrackingLoop for Box<T> {
    fn x(&self) -> f64 {
        (**self).x()
    }

    fn comm_step(&self) -> f64 {
        (**self).comm_step()
    }

    fn advance_comm(&mut self, x_sp_mod: f64) -> Result<()> {
        (**self).advance_comm(x_sp_mod)
    }
}

/// Number of communication samples covering `duration`.
pub fn sample_count(duration: f64, comm_step: f64) -> usize {
    ((duration / comm_step) * (1.0 + 1e-12)).floor() as usize + 1
}

/// Drive any [`TrackingLoop`] under a set-point schedule and hook.
///
/// At each communication instant `t_k = k*comm_step` the hook sees
/// `(t_k, x_sp, x)`, its decision is recorded, and the loop advances one
/// interval with the modulated set point held.
pub fn run_loop<L: TrackingLoop + ?Sized, H: Supplementary + ?Sized>(
    plant: &mut L,
    schedule: &SetpointSchedule,
    hook: &mut H,
    duration: f64,
) -> Result<EpisodeTrace> {
    if !(duration > 0.0) {
        return Err(Error::config("duration", "must be > 0"));
    }
    schedule.validate("setpoint_schedule")?;
    let comm = plant.comm_step();
    let n = sample_count(duration, comm);
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * comm;
        let x_sp = schedule.value_at(t);
        let x = plant.x();
        let d = hook.decide(t, x_sp, x);
        samples.push(TraceSample {
            t,
            x_sp,
            x_sp_mod: d.x_sp_mod,
            x,
            e: x_sp - x,
            m: d.m,
            paradigm: d.paradigm,
        });
        if k + 1 < n {
            plant.advance_comm(d.x_sp_mod)?;
        }
    }
    Ok(EpisodeTrace::new(samples))
}

pub fn run_closed_loop<H: Supplementary + ?Sized>(
    cfg: &PlantConfig,
    gains: PiGains,
    schedule: &SetpointSchedule,
    disturbances: &[DisturbanceEvent],
    hook: &mut H,
    duration: f64,
) -> Result<EpisodeTrace> {
    let mut plant = ClosedLoop::new(*cfg, gains, schedule.initial(), disturbances.to_vec())?;
    run_loop(&mut plant, schedule, hook, duration)
}

pub fn run_nested_loop<H: Supplementary + ?Sized>(
    cfg: &NestedLoopConfig,
    schedule: &SetpointSchedule,
    disturbances: &[DisturbanceEvent],
    hook: &mut H,
    duration: f64,
) -> Result<EpisodeTrace> {
    let mut plant = NestedLoop::new(*cfg, schedule.initial(), disturbances.to_vec())?;
    run_loop(&mut plant, schedule, hook, duration)
}

/// Single loops stepped in lockstep, each seeing `κ` times the other loops'
/// output deviations as an output disturbance.
#[derive(Debug, Clone)]
pub struct CoupledLoops {
    loops: Vec<ClosedLoop>,
    coupling: f64,
}

impl CoupledLoops {
    pub fn new(loops: Vec<ClosedLoop>, coupling: f64) -> Result<Self> {
        if loops.is_empty() {
            return Err(Error::config("agents", "need at least one loop"));
        }
        if !(0.0..=0.2).contains(&coupling) {
            return Err(Error::config("coupling", "must lie in [0, 0.2]"));
        }
        let (h, comm) = (loops[0].config().sim_step, loops[0].config().comm_step);
        if loops
            .iter()
            .any(|l| l.config().sim_step != h || l.config().comm_step != comm)
        {
            return Err(Error::config(
                "agents",
                "coupled loops must share sim_step and comm_step",
            ));
        }
        Ok(CoupledLoops { loops, coupling })
    }

    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.loops[i].x()
    }

    pub fn comm_step(&self) -> f64 {
        self.loops[0].config().comm_step
    }

    /// Advance every loop one communication interval. Deviations are taken
    /// against the nominal set points `x_sp`.
    pub fn advance_comm(&mut self, x_sp_mod: &[f64], x_sp: &[f64]) -> Result<()> {
        let n_sub = self.loops[0].substeps_per_comm();
        let mut devs = vec![0.0; self.loops.len()];
        for _ in 0..n_sub {
            for (d, (l, sp)) in devs.iter_mut().zip(self.loops.iter().zip(x_sp)) {
                *d = l.x() - sp;
            }
            let total: f64 = devs.iter().sum();
            for (i, l) in self.loops.iter_mut().enumerate() {
                l.substep(x_sp_mod[i], self.coupling * (total - devs[i]))?;
            }
        }
        Ok(())
    }
}

/// Coupled counterpart of [`run_loop`]: one schedule and hook per loop.
pub fn run_coupled<H: std::ops::DerefMut<Target = S>, S: Supplementary + ?Sized>(
    plant: &mut CoupledLoops,
    schedules: &[SetpointSchedule],
    hooks: &mut [H],
    duration: f64,
) -> Result<Vec<EpisodeTrace>> {
    if schedules.len() != plant.len() || hooks.len() != plant.len() {
        return Err(Error::config("agents", "one schedule and hook per loop"));
    }
    if !(duration > 0.0) {
        return Err(Error::config("duration", "must be > 0"));
    }
    let comm = plant.comm_step();
    let n = sample_count(duration, comm);
    let mut traces: Vec<Vec<TraceSample>> = vec![Vec::with_capacity(n); plant.len()];
    let mut sp = vec![0.0; plant.len()];
    let mut sp_mod = vec![0.0; plant.len()];
    for k in 0..n {
        let t = k as f64 * comm;
        for i in 0..plant.len() {
            let x_sp = schedules[i].value_at(t);
            let x = plant.x(i);
            let d = hooks[i].decide(t, x_sp, x);
            traces[i].push(TraceSample {
                t,
                x_sp,
                x_sp_mod: d.x_sp_mod,
                x,
                e: x_sp - x,
                m: d.m,
                paradigm: d.paradigm,
            });
            sp[i] = x_sp;
            sp_mod[i] = d.x_sp_mod;
        }
        if k + 1 < n {
            plant.advance_comm(&sp_mod, &sp)?;
        }
    }
    Ok(traces.into_iter().map(EpisodeTrace::new).collect())
}
