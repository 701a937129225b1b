//! Case runners: calibration, training, evaluation, comparison.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::env::{train_coupled, AgentSetup, PlantSource};
use crate::learner::{train, PolicySet, RlController, SimRng, TrainingReport};
use crate::mdp::{ActionGrid, AgentModel, BinRanges, ParadigmRanges};
use crate::metrics::{
    cumulative_error, overshoot_pct, settling_time, undershoot_pct, EpisodeTrace, Step,
    REPORT_SETTLING_BAND_PCT,
};
use crate::modulation::{Paradigm, SpaaceController};
use crate::scenarios::{
    Scenario, ScenarioParams, CASE5_TARGET, CASE_EVENT_TIME, CASE_SECOND_STEP_TIME, CASE_STEP_TIME,
};
use crate::sim::{
    run_coupled, run_loop, ClosedLoop, CoupledLoops, DisturbanceEvent, DisturbanceKind,
    LoopSpec, Passthrough, SetpointSchedule, Supplementary,
};

use super::archive::{ArchiveSummary, PolicyArchive};
use super::config::{Case, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    Rl,
    Spaace,
    None,
}

impl Controller {
    pub const ALL: [Controller; 3] = [Controller::Rl, Controller::Spaace, Controller::None];

    pub fn name(self) -> &'static str {
        match self {
            Controller::Rl => "rl",
            Controller::Spaace => "spaace",
            Controller::None => "none",
        }
    }
}

impl FromStr for Controller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(Controller::Rl),
            "spaace" => Ok(Controller::Spaace),
            "none" => Ok(Controller::None),
            _ => Err(Error::config("controller", format!("unknown controller `{s}`"))),
        }
    }
}

// ---------------------------------------------------------------- calibration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Tuned time constant and the resulting no-action overshoot (%).
    pub tuned: Option<(String, f64, f64)>,
    pub load_overshoot: f64,
    pub fault_overshoot: f64,
    pub ranges: Vec<ParadigmRanges>,
}

/// Peak of `x - x_sp` over `x_sp`, in percent, from `at` onward.
fn peak_excursion_pct(trace: &EpisodeTrace, x_sp: f64, at: f64) -> f64 {
    let peak = trace.from_time(at).max_x().unwrap_or(x_sp);
    100.0 * (peak - x_sp).max(0.0) / x_sp.abs()
}

/// Largest `|Δe|/comm_step` after `at`, normalized by the set-point basis.
/// Pairs spanning a set-point change are skipped.
pub fn max_edot(trace: &EpisodeTrace, at: f64, basis_floor: f64) -> f64 {
    let w = trace.from_time(at);
    let s = w.samples();
    s.windows(2)
        .filter(|p| p[0].x_sp == p[1].x_sp)
        .map(|p| {
            let dt = p[1].t - p[0].t;
            ((p[1].e - p[0].e) / dt).abs() / p[1].x_sp.abs().max(basis_floor)
        })
        .fold(0.0, f64::max)
}

fn run_passive(spec: &LoopSpec, sc: &Scenario) -> Result<EpisodeTrace> {
    let spec = spec.with_comm_step(sc.comm_step);
    let mut plant = spec.build(sc.schedule.initial(), &sc.disturbances)?;
    run_loop(&mut plant, &sc.schedule, &mut Passthrough, sc.duration)
}

/// Bisect `set(tau)` on `[lo, hi]` until the no-action overshoot hits `target`.
fn bisect_tau(
    lo: f64,
    hi: f64,
    target: f64,
    key: &str,
    mut overshoot: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let (mut a, mut b) = (lo, hi);
    let (oa, ob) = (overshoot(a)?, overshoot(b)?);
    if !(oa <= target && target <= ob) {
        return Err(Error::config(
            key,
            format!("target overshoot {target}% not reachable (range {oa:.1}%..{ob:.1}%)"),
        ));
    }
    let mut best = (b, ob);
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        let om = overshoot(mid)?;
        best = (mid, om);
        if (om - target).abs() < 0.01 {
            break;
        }
        if om < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(best)
}

fn unit_disturbance(p: &ScenarioParams, kind: DisturbanceKind) -> Scenario {
    let ev = DisturbanceEvent {
        kind,
        start: p.event_time,
        magnitude: 1.0,
        decay_tau: p.fault_decay_tau,
    };
    Scenario {
        kind: if kind == DisturbanceKind::InputStep {
            crate::scenarios::ScenarioKind::LoadEnergize
        } else {
            crate::scenarios::ScenarioKind::Fault
        },
        schedule: SetpointSchedule::constant(1.0),
        disturbances: vec![ev],
        duration: p.event_time + p.settle_margin,
        comm_step: p.disturbance_comm_step,
    }
}

/// Binning ranges from no-action baselines on `spec`.
fn ranges_for(cfg: &ExperimentConfig, spec: &LoopSpec) -> Result<ParadigmRanges> {
    let p = &cfg.scenario;
    let floor = cfg.reward.sp_basis_floor;
    let margin = cfg.calibration.edot_margin;
    let t0 = p.event_time;
    let up = run_passive(spec, &p.step_up_to(1.0, t0))?;
    let down = run_passive(spec, &p.step_down_to(0.2, t0))?;
    let load = run_passive(spec, &p.load_energize(p.load.hi, t0))?;
    let fault = run_passive(spec, &p.fault(p.fault.lo, t0))?;
    let e_range = cfg.reward.band_fraction;
    Ok(ParadigmRanges {
        increase: BinRanges {
            e_range,
            edot_range: margin * max_edot(&up, t0, floor),
        },
        decrease: BinRanges {
            e_range,
            edot_range: margin * max_edot(&down, t0, floor),
        },
        disturbance: BinRanges {
            e_range,
            edot_range: margin * max_edot(&load, t0, floor).max(max_edot(&fault, t0, floor)),
        },
    })
}

/// Upper end of the time-constant search.
const TAU_CEILING: f64 = 0.05;

/// Tune the plant so the no-action baseline matches the configured targets,
/// then derive the disturbance mappings and binning ranges.
pub fn calibrate(cfg: &ExperimentConfig) -> Result<(ExperimentConfig, CalibrationReport)> {
    cfg.validate()?;
    let mut out = cfg.clone();
    let targets = cfg.calibration;
    let p = cfg.scenario;
    let probe = ScenarioParams {
        settle_margin: p.settle_margin.max(20.0 * TAU_CEILING),
        ..p
    };

    let tuned = match cfg.case {
        Case::Case1 | Case::Case2 | Case::Case3 | Case::Case4 => {
            let gains = cfg.pi_gains()?;
            let sc = probe.step_up_to(1.0, p.event_time);
            let lo = 10.0 * cfg.plant.sim_step;
            let hi = TAU_CEILING;
            let (tau, os) = bisect_tau(lo, hi, targets.step_overshoot, "plant.tau", |tau| {
                let spec = LoopSpec::Single {
                    plant: crate::sim::PlantConfig { tau, ..cfg.plant },
                    gains,
                };
                Ok(peak_excursion_pct(&run_passive(&spec, &sc)?, 1.0, sc.schedule.last_time()))
            })?;
            if !(targets.step_window.0..=targets.step_window.1).contains(&os) {
                return Err(Error::config(
                    "calibration.step_window",
                    format!("baseline overshoot {os:.2}% outside the window"),
                ));
            }
            out.plant.tau = tau;
            Some(("plant.tau".to_string(), tau, os))
        }
        Case::Case5 => {
            let nested = cfg.nested.expect("validated");
            let sc = probe.voltage_step_to(CASE5_TARGET, p.event_time);
            let lo = 10.0 * cfg.plant.sim_step;
            let hi = TAU_CEILING;
            let (tau, os) = bisect_tau(lo, hi, targets.voltage_overshoot, "nested.outer_tau", |tau| {
                let mut c = cfg.clone();
                c.nested = Some(super::config::NestedSection {
                    outer_tau: tau,
                    ..nested
                });
                let spec = c.loop_spec()?;
                let tr = run_passive(&spec, &sc)?;
                Ok(peak_excursion_pct(&tr, CASE5_TARGET, sc.schedule.last_time()))
            })?;
            if !(targets.voltage_window.0..=targets.voltage_window.1).contains(&os) {
                return Err(Error::config(
                    "calibration.voltage_window",
                    format!("baseline overshoot {os:.2}% outside the window"),
                ));
            }
            out.nested = Some(super::config::NestedSection {
                outer_tau: tau,
                ..nested
            });
            Some(("nested.outer_tau".to_string(), tau, os))
        }
    };

    // Disturbance responses are linear in magnitude: scale a unit response.
    let spec = out.loop_spec()?;
    let unit_load = run_passive(&spec, &unit_disturbance(&p, DisturbanceKind::InputStep))?;
    let unit_fault = run_passive(&spec, &unit_disturbance(&p, DisturbanceKind::DecayingPulse))?;
    let ol = peak_excursion_pct(&unit_load, 1.0, p.event_time);
    let of = peak_excursion_pct(&unit_fault, 1.0, p.event_time);
    if !(ol > 0.0 && of > 0.0) {
        return Err(Error::config(
            "scenario",
            "unit disturbance produces no overshoot; cannot map magnitudes",
        ));
    }
    let span = targets.disturbance_span;
    out.scenario.load.at_hi = targets.load_overshoot / ol;
    out.scenario.load.at_lo = out.scenario.load.at_hi / span;
    out.scenario.fault.at_lo = targets.fault_overshoot / of;
    out.scenario.fault.at_hi = out.scenario.fault.at_lo / span;
    let tau = out.slowest_tau();
    if out.scenario.settle_margin < 20.0 * tau {
        out.scenario.settle_margin = 20.0 * tau;
    }

    let mut ranges = Vec::new();
    if cfg.case.is_multi_agent() {
        for (plant, gains) in out.agent_loops()? {
            ranges.push(ranges_for(&out, &LoopSpec::Single { plant, gains })?);
        }
        out.multi.as_mut().expect("validated").ranges = ranges.clone();
    } else {
        let r = ranges_for(&out, &spec)?;
        out.ranges = Some(r);
        ranges.push(r);
    }

    let check = |sc: Scenario| -> Result<f64> {
        Ok(peak_excursion_pct(&run_passive(&spec, &sc)?, 1.0, CASE_EVENT_TIME))
    };
    let report = CalibrationReport {
        tuned,
        load_overshoot: check(out.scenario.case3())?,
        fault_overshoot: check(out.scenario.case4())?,
        ranges,
    };
    out.validate()?;
    Ok((out, report))
}

// ------------------------------------------------------------------- training

/// Trained archives, keyed by agent (0 for single-agent cases).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub archives: Vec<(usize, PolicyArchive)>,
    pub reports: Vec<(usize, TrainingReport)>,
}

fn setup_for(cfg: &ExperimentConfig, ranges: ParadigmRanges) -> AgentSetup {
    AgentSetup {
        reward: cfg.reward,
        ranges,
        terminal_deadband: cfg.train.terminal_deadband,
    }
}

/// Training stream seed for one paradigm run.
pub fn stream_seed(seed: u64, paradigm: Paradigm) -> u64 {
    seed.wrapping_add(paradigm.index() as u64)
}

fn family(
    case: Case,
    paradigm: Paradigm,
    params: ScenarioParams,
) -> impl FnMut(&mut SimRng) -> Scenario {
    move |rng: &mut SimRng| match (case, paradigm) {
        (Case::Case5, _) => params.gen_voltage_step(rng),
        (_, Paradigm::DecreaseTracking) => params.gen_step_down(rng),
        (_, Paradigm::DisturbanceRejection) => {
            if rng.gen::<bool>() {
                params.gen_load_energize(rng)
            } else {
                params.gen_fault(rng)
            }
        }
        _ => params.gen_step_up(rng),
    }
}

pub fn train_case(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut archives = Vec::new();
    let mut reports = Vec::new();
    let tcfg = cfg.train_config();

    if cfg.case.is_multi_agent() {
        let loops = cfg.agent_loops()?;
        let ranges = cfg.require_agent_ranges()?;
        let setups: Vec<AgentSetup> = ranges.iter().map(|r| setup_for(cfg, *r)).collect();
        let p = Paradigm::IncreaseTracking;
        let grid = ActionGrid::for_paradigm(p)?;
        let mut models = loops
            .iter()
            .map(|_| AgentModel::new(grid.len(), tcfg.gamma))
            .collect::<Result<Vec<_>>>()?;
        let coupling = cfg.multi.as_ref().expect("validated").coupling;
        let params = cfg.scenario;
        let n = loops.len();
        let run_cfg = crate::learner::TrainConfig {
            seed: stream_seed(tcfg.seed, p),
            ..tcfg
        };
        let reps = train_coupled(&mut models, &loops, &grid, &setups, &run_cfg, |rng| {
            params.gen_multi_step(n, coupling, rng)
        })?;
        for (i, (model, rep)) in models.into_iter().zip(reps).enumerate() {
            archives.push((
                i,
                PolicyArchive {
                    grid: grid.clone(),
                    ranges: ranges[i].get(p).expect("active"),
                    model,
                    summary: Some(ArchiveSummary::from_report(&rep)),
                },
            ));
            reports.push((i, rep));
        }
    } else {
        let spec = cfg.loop_spec()?;
        let ranges = cfg.require_ranges()?;
        let setup = setup_for(cfg, ranges);
        for &p in cfg.case.paradigms() {
            let grid = ActionGrid::for_paradigm(p)?;
            let mut model = AgentModel::new(grid.len(), tcfg.gamma)?;
            let mut source = PlantSource::new(spec, p, setup, family(cfg.case, p, cfg.scenario))?;
            let run_cfg = crate::learner::TrainConfig {
                seed: stream_seed(tcfg.seed, p),
                ..tcfg
            };
            let rep = train(&mut model, &mut source, &run_cfg)?;
            archives.push((
                0,
                PolicyArchive {
                    grid,
                    ranges: ranges.get(p).expect("active"),
                    model,
                    summary: Some(ArchiveSummary::from_report(&rep)),
                },
            ));
            reports.push((0, rep));
        }
    }
    Ok(TrainOutcome { archives, reports })
}

// ----------------------------------------------------------------- evaluation

/// Per-agent transient metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub agent: usize,
    pub peak_overshoot_pct: f64,
    /// Only for cases with a downward step.
    pub peak_undershoot_pct: Option<f64>,
    pub cumulative_error: f64,
    pub settling_time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub controller: Controller,
    pub traces: Vec<EpisodeTrace>,
    pub metrics: Vec<CaseMetrics>,
}

/// The evaluation scenario of a single-agent case.
pub fn case_scenario(cfg: &ExperimentConfig) -> Scenario {
    let p = &cfg.scenario;
    match cfg.case {
        Case::Case1 | Case::Case2 => p.case1(),
        Case::Case3 => p.case3(),
        Case::Case4 => p.case4(),
        Case::Case5 => p.case5(),
    }
}

fn metrics_for(case: Case, agent: usize, trace: &EpisodeTrace, floor: f64) -> Result<CaseMetrics> {
    let (over, under, settle_from) = match case {
        Case::Case1 => {
            let up = Step {
                from: 0.0,
                to: 1.0,
                at: CASE_STEP_TIME,
            };
            let down = Step {
                from: 1.0,
                to: 0.2,
                at: CASE_SECOND_STEP_TIME,
            };
            let over = overshoot_pct(&trace.window(CASE_STEP_TIME, CASE_SECOND_STEP_TIME), up)?;
            let under = undershoot_pct(&trace.from_time(CASE_SECOND_STEP_TIME), down)?;
            (over, Some(under), CASE_SECOND_STEP_TIME)
        }
        Case::Case2 => (
            overshoot_pct(
                trace,
                Step {
                    from: 0.0,
                    to: 1.0,
                    at: CASE_STEP_TIME,
                },
            )?,
            None,
            CASE_STEP_TIME,
        ),
        Case::Case3 | Case::Case4 => (
            peak_excursion_pct(trace, 1.0, CASE_EVENT_TIME),
            None,
            CASE_EVENT_TIME,
        ),
        Case::Case5 => (
            overshoot_pct(
                trace,
                Step {
                    from: 0.0,
                    to: CASE5_TARGET,
                    at: CASE_STEP_TIME,
                },
            )?,
            None,
            CASE_STEP_TIME,
        ),
    };
    Ok(CaseMetrics {
        agent,
        peak_overshoot_pct: over,
        peak_undershoot_pct: under,
        cumulative_error: cumulative_error(trace),
        settling_time: settling_time(trace, REPORT_SETTLING_BAND_PCT, settle_from, floor)?,
    })
}

/// Keep every `k`-th sample.
fn decimate(trace: EpisodeTrace, k: usize) -> EpisodeTrace {
    if k <= 1 {
        return trace;
    }
    EpisodeTrace::new(trace.samples().iter().step_by(k).copied().collect())
}

/// Samples of the scenario cadence per SPAACE sample.
fn spaace_ratio(cfg: &ExperimentConfig, sc: &Scenario) -> Result<usize> {
    let r = sc.comm_step / cfg.spaace.comm_step;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-6 * n {
        return Err(Error::config(
            "spaace.comm_step",
            "must divide the scenario communication step",
        ));
    }
    Ok(n as usize)
}

/// Archives per agent, indexed by paradigm.
pub type AgentPolicies = Vec<Vec<PolicyArchive>>;

fn policy_set(archives: &[PolicyArchive], needed: &[Paradigm]) -> Result<(PolicySet, ParadigmRanges)> {
    let mut set = PolicySet::default();
    let fallback = BinRanges {
        e_range: 1.0,
        edot_range: 1.0,
    };
    let mut ranges = ParadigmRanges {
        increase: fallback,
        decrease: fallback,
        disturbance: fallback,
    };
    for a in archives {
        set.set(a.paradigm(), a.model.clone());
        ranges.set(a.paradigm(), a.ranges);
    }
    for &p in needed {
        if set.get(p).is_none() {
            return Err(Error::MissingParadigm(p.name()));
        }
    }
    Ok((set, ranges))
}

fn make_hook(
    cfg: &ExperimentConfig,
    controller: Controller,
    archives: Option<&[PolicyArchive]>,
    comm: f64,
) -> Result<Box<dyn Supplementary>> {
    Ok(match controller {
        Controller::None => Box::new(Passthrough),
        Controller::Spaace => Box::new(SpaaceController::new(cfg.spaace, cfg.spaace.comm_step)),
        Controller::Rl => {
            let archives =
                archives.ok_or(Error::MissingParadigm(cfg.case.paradigms()[0].name()))?;
            let (set, ranges) = policy_set(archives, cfg.case.paradigms())?;
            Box::new(RlController::new(set, cfg.reward, ranges, comm))
        }
    })
}

pub fn eval_case(
    cfg: &ExperimentConfig,
    controller: Controller,
    policies: Option<&AgentPolicies>,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let floor = cfg.reward.sp_basis_floor;
    if cfg.case.is_multi_agent() {
        let loops = cfg.agent_loops()?;
        let coupling = cfg.multi.as_ref().expect("validated").coupling;
        let ms = cfg.scenario.case2(coupling);
        ms.validate(cfg.slowest_tau())?;
        let base_comm = ms.agents[0].comm_step;
        let (comm, k) = match controller {
            Controller::Spaace => (cfg.spaace.comm_step, spaace_ratio(cfg, &ms.agents[0])?),
            _ => (base_comm, 1),
        };
        let built = loops
            .iter()
            .zip(&ms.agents)
            .map(|((plant, gains), sc)| {
                ClosedLoop::new(
                    plant.with_comm_step(comm),
                    *gains,
                    sc.schedule.initial(),
                    sc.disturbances.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut plant = CoupledLoops::new(built, coupling)?;
        let mut hooks = Vec::new();
        for i in 0..loops.len() {
            let arch = match (controller, policies) {
                (Controller::Rl, Some(p)) => Some(
                    p.get(i)
                        .map(|v| v.as_slice())
                        .ok_or(Error::MissingParadigm(Paradigm::IncreaseTracking.name()))?,
                ),
                _ => None,
            };
            hooks.push(make_hook(cfg, controller, arch, comm)?);
        }
        let schedules: Vec<SetpointSchedule> =
            ms.agents.iter().map(|a| a.schedule.clone()).collect();
        let traces = run_coupled(&mut plant, &schedules, &mut hooks, ms.duration())?;
        let traces: Vec<EpisodeTrace> = traces.into_iter().map(|t| decimate(t, k)).collect();
        let metrics = traces
            .iter()
            .enumerate()
            .map(|(i, t)| metrics_for(cfg.case, i, t, floor))
            .collect::<Result<Vec<_>>>()?;
        return Ok(EvalOutcome {
            controller,
            traces,
            metrics,
        });
    }

    let sc = case_scenario(cfg);
    sc.validate(cfg.slowest_tau())?;
    let (comm, k) = match controller {
        Controller::Spaace => (cfg.spaace.comm_step, spaace_ratio(cfg, &sc)?),
        _ => (sc.comm_step, 1),
    };
    let spec = cfg.loop_spec()?.with_comm_step(comm);
    spec.validate()?;
    let arch = match (controller, policies) {
        (Controller::Rl, Some(p)) => p.first().map(|v| v.as_slice()),
        _ => None,
    };
    let mut hook = make_hook(cfg, controller, arch, comm)?;
    let mut plant = spec.build(sc.schedule.initial(), &sc.disturbances)?;
    let trace = decimate(run_loop(&mut plant, &sc.schedule, hook.as_mut(), sc.duration)?, k);
    let metrics = vec![metrics_for(cfg.case, 0, &trace, floor)?];
    Ok(EvalOutcome {
        controller,
        traces: vec![trace],
        metrics,
    })
}

/// One row per controller and agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub controller: Controller,
    #[serde(flatten)]
    pub metrics: CaseMetrics,
}

pub fn compare_case(cfg: &ExperimentConfig, policies: &AgentPolicies) -> Result<Vec<EvalOutcome>> {
    Controller::ALL
        .iter()
        .map(|&c| eval_case(cfg, c, Some(policies)))
        .collect()
}

pub fn comparison_rows(outcomes: &[EvalOutcome]) -> Vec<ComparisonRow> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.metrics.iter().map(move |m| ComparisonRow {
                controller: o.controller,
                metrics: m.clone(),
            })
        })
        .collect()
}
