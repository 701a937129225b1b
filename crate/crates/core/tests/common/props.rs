#![allow(dead_code)]

//! Randomized invariant checks shared by the property tests and the
//! acceptance run. Each check drives its own runner and reports the first
//! failure as a string.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use setpoint_rl::harness::archive::{ArchiveSummary, PolicyArchive};
use setpoint_rl::mdp::{
    discretize_with, ActionGrid, AgentModel, BinRanges, DiscreteState, Successor, N_STATES,
};
use setpoint_rl::metrics::{cumulative_error, overshoot_pct, EpisodeTrace, Step, TraceSample};
use setpoint_rl::modulation::{
    apply_modulation, deadband, detect_paradigm, linear_predict, spaace_decide, Paradigm,
    SecondaryLogic, SetpointSignal, SpaaceConfig,
};
use setpoint_rl::sim::{
    run_closed_loop, run_coupled, ClosedLoop, CoupledLoops, DisturbanceEvent, DisturbanceKind,
    Passthrough, PiGains, PlantConfig, SetpointSchedule,
};

pub const CASES: u32 = 1000;

pub type Check = fn() -> Result<(), String>;

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

/// Every named check, in report order.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("P rows sum to 1", p_rows_normalized),
        ("mean reward within observed range", mean_reward_bounded),
        ("q within [fail/(1-γ), 0]", q_bounds),
        ("argmax tie-break and affine invariance", argmax_tie_break),
        ("paradigm latching", paradigm_latching),
        ("secondary logic switches only on commands", secondary_logic_latching),
        ("S_e concatenation identity", se_concatenation),
        ("metrics invariant under time shift", metrics_time_shift),
        ("trace determinism", trace_determinism),
        ("archive round-trip", archive_round_trip),
        ("discretize monotone", discretize_monotone),
        ("zero coupling matches single loop", zero_coupling_identity),
        ("modulation branch directions", modulation_directions),
        ("SPAACE takes one of three values", spaace_three_values),
        ("linear predictor exact on affine signals", predictor_affine),
    ]
}

fn state() -> impl Strategy<Value = DiscreteState> {
    (0..N_STATES).prop_map(DiscreteState::from_index)
}

fn successor() -> impl Strategy<Value = Successor> {
    prop_oneof![1 => Just(Successor::Terminal), 4 => state().prop_map(Successor::State)]
}

/// Random transitions on a small set of pairs so rows collect several samples.
fn transitions(n_actions: usize) -> impl Strategy<Value = Vec<(usize, usize, Successor, f64)>> {
    prop::collection::vec(
        (0usize..6, 0..n_actions, successor(), -1000.0f64..=0.0),
        1..60,
    )
}

fn build(n_actions: usize, gamma: f64, tr: &[(usize, usize, Successor, f64)]) -> AgentModel {
    let mut m = AgentModel::new(n_actions, gamma).unwrap();
    for &(s, a, next, r) in tr {
        m.record_transition(DiscreteState::from_index(s), a, next, r);
    }
    m
}

pub fn p_rows_normalized() -> Result<(), String> {
    run(transitions(7), |tr| {
        let m = build(7, 0.95, &tr);
        for (s, a, _, _) in m.observed() {
            let sum: f64 = m.transition_probs(s, a).iter().map(|(_, p)| p).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
        }
        Ok(())
    })
}

pub fn mean_reward_bounded() -> Result<(), String> {
    run(transitions(5), |tr| {
        let m = build(5, 0.95, &tr);
        for (s, a, _, _) in m.observed() {
            let rs: Vec<f64> = tr
                .iter()
                .filter(|t| t.0 == s.index() && t.1 == a)
                .map(|t| t.3)
                .collect();
            let lo = rs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let r = m.mean_reward(s, a);
            prop_assert!(r >= lo - 1e-9 && r <= hi + 1e-9, "{r} outside [{lo}, {hi}]");
        }
        Ok(())
    })
}

pub fn q_bounds() -> Result<(), String> {
    let strat = (transitions(5), 0.5f64..0.99, prop::collection::vec(0usize..60, 1..200));
    run(strat, |(tr, gamma, order)| {
        let mut m = build(5, gamma, &tr);
        let pairs: Vec<(DiscreteState, usize)> = m.observed().map(|(s, a, _, _)| (s, a)).collect();
        for i in order {
            let (s, a) = pairs[i % pairs.len()];
            m.q_backup(s, a).unwrap();
        }
        let floor = -1000.0 / (1.0 - gamma);
        for (_, _, q, _) in m.observed() {
            prop_assert!(q <= 0.0 && q >= floor - 1e-9, "q {q} outside [{floor}, 0]");
        }
        Ok(())
    })
}

pub fn argmax_tie_break() -> Result<(), String> {
    // small integer values force frequent ties
    let strat = (prop::collection::vec(-4i32..=0, 7), 0.01f64..100.0, -50.0f64..50.0, state());
    run(strat, |(row, scale, shift, s)| {
        let mut m = AgentModel::new(7, 0.95).unwrap();
        for (a, &v) in row.iter().enumerate() {
            m.set_q(s, a, v as f64);
        }
        let max = *row.iter().max().unwrap();
        let first = row.iter().position(|&v| v == max).unwrap();
        prop_assert_eq!(m.greedy_action(s), first);
        for (a, &v) in row.iter().enumerate() {
            m.set_q(s, a, v as f64 * scale + shift);
        }
        prop_assert_eq!(m.greedy_action(s), first);
        Ok(())
    })
}

fn paradigm() -> impl Strategy<Value = Paradigm> {
    prop_oneof![
        Just(Paradigm::IncreaseTracking),
        Just(Paradigm::DecreaseTracking),
        Just(Paradigm::DisturbanceRejection),
        Just(Paradigm::Idle),
    ]
}

pub fn paradigm_latching() -> Result<(), String> {
    let strat = (paradigm(), -1.5f64..1.5, 0.0f64..1.2, 0.0f64..1.2, 0.001f64..0.05);
    run(strat, |(current, e, prev, sp, db)| {
        let p = detect_paradigm(SetpointSignal::new(prev, sp), e, db, current);
        if current != Paradigm::Idle && e.abs() > db {
            prop_assert_eq!(p, current);
        }
        Ok(())
    })
}

pub fn secondary_logic_latching() -> Result<(), String> {
    let step = (prop_oneof![3 => Just(None), 1 => (0.0f64..1.1).prop_map(Some)], -0.3f64..0.3);
    run(prop::collection::vec(step, 1..80), |seq| {
        let mut logic = SecondaryLogic::new();
        let mut sp = 1.0;
        let mut prev = Paradigm::Idle;
        for (cmd, e) in seq {
            if let Some(v) = cmd {
                sp = v;
            }
            let p = logic.update(sp, e);
            let switched = prev != Paradigm::Idle && p != Paradigm::Idle && p != prev;
            prop_assert!(!switched || logic.command_changed(), "{prev} -> {p} without a command");
            if prev == Paradigm::Idle && p == Paradigm::DisturbanceRejection {
                prop_assert!(e.abs() > deadband(sp));
            }
            prev = p;
        }
        Ok(())
    })
}

fn trace_from(errors: &[f64], t0: f64) -> EpisodeTrace {
    EpisodeTrace::new(
        errors
            .iter()
            .enumerate()
            .map(|(k, &e)| TraceSample {
                t: t0 + k as f64 * 1e-4,
                x_sp: 1.0,
                x_sp_mod: 1.0,
                x: 1.0 - e,
                e,
                m: 0.0,
                paradigm: Paradigm::Idle,
            })
            .collect(),
    )
}

pub fn se_concatenation() -> Result<(), String> {
    let errs = || prop::collection::vec(-2.0f64..2.0, 1..100);
    run((errs(), errs()), |(a, b)| {
        let ta = trace_from(&a, 0.0);
        let tb = trace_from(&b, a.len() as f64 * 1e-4);
        let joined = cumulative_error(&ta.concat(&tb));
        let expect = (cumulative_error(&ta).powi(2) + cumulative_error(&tb).powi(2)).sqrt();
        prop_assert!((joined - expect).abs() <= 1e-12 * expect.max(1.0), "{joined} vs {expect}");
        Ok(())
    })
}

pub fn metrics_time_shift() -> Result<(), String> {
    let strat = (prop::collection::vec(-1.0f64..1.0, 2..100), 0.0f64..5.0);
    run(strat, |(errs, dt)| {
        let t = trace_from(&errs, 0.0);
        let s = t.shifted(dt);
        let step = Step { from: 0.0, to: 1.0, at: 0.0 };
        let shifted = Step { at: dt, ..step };
        prop_assert_eq!(overshoot_pct(&t, step).unwrap(), overshoot_pct(&s, shifted).unwrap());
        prop_assert_eq!(cumulative_error(&t), cumulative_error(&s));
        Ok(())
    })
}

fn loop_params() -> impl Strategy<Value = (PlantConfig, PiGains, f64, f64)> {
    (1.0f64..10.0, 1e-3f64..1e-2, 0usize..3, 0.05f64..1.0, 0.0f64..2000.0, 0.1f64..1.1, -0.3f64..0.3)
        .prop_map(|(gain, tau, delay_steps, kp, ki, target, dist)| {
            let plant = PlantConfig {
                gain,
                tau,
                delay_steps,
                sim_step: 1e-5,
                comm_step: 1e-4,
            };
            (plant, PiGains { kp, ki }, target, dist)
        })
}

pub fn trace_determinism() -> Result<(), String> {
    run(loop_params(), |(plant, gains, target, dist)| {
        let sched = SetpointSchedule::step(0.0, 0.002, target);
        let ev = [DisturbanceEvent {
            kind: DisturbanceKind::DecayingPulse,
            start: 0.006,
            magnitude: dist,
            decay_tau: 0.002,
        }];
        let a = run_closed_loop(&plant, gains, &sched, &ev, &mut Passthrough, 0.01).unwrap();
        let b = run_closed_loop(&plant, gains, &sched, &ev, &mut Passthrough, 0.01).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
        for (x, y) in a.samples().iter().zip(b.samples()) {
            prop_assert_eq!(x.x.to_bits(), y.x.to_bits());
        }
        Ok(())
    })
}

pub fn zero_coupling_identity() -> Result<(), String> {
    run((loop_params(), loop_params()), |((p1, g1, t1, _), (p2, g2, t2, _))| {
        let p2 = PlantConfig { sim_step: p1.sim_step, comm_step: p1.comm_step, ..p2 };
        let s1 = SetpointSchedule::step(0.0, 0.002, t1);
        let s2 = SetpointSchedule::step(0.0, 0.003, t2);
        let loops = vec![
            ClosedLoop::new(p1, g1, 0.0, vec![]).unwrap(),
            ClosedLoop::new(p2, g2, 0.0, vec![]).unwrap(),
        ];
        let mut coupled = CoupledLoops::new(loops, 0.0).unwrap();
        let (mut h1, mut h2) = (Passthrough, Passthrough);
        let both = run_coupled(&mut coupled, &[s1.clone(), s2.clone()], &mut [&mut h1, &mut h2], 0.008)
            .unwrap();
        let a = run_closed_loop(&p1, g1, &s1, &[], &mut Passthrough, 0.008).unwrap();
        let b = run_closed_loop(&p2, g2, &s2, &[], &mut Passthrough, 0.008).unwrap();
        prop_assert_eq!(both[0].to_csv(), a.to_csv());
        prop_assert_eq!(both[1].to_csv(), b.to_csv());
        Ok(())
    })
}

fn archive() -> impl Strategy<Value = PolicyArchive> {
    let grid = prop_oneof![
        Just(Paradigm::IncreaseTracking),
        Just(Paradigm::DecreaseTracking),
        Just(Paradigm::DisturbanceRejection),
    ]
    .prop_map(|p| ActionGrid::for_paradigm(p).unwrap());
    let q = prop_oneof![-1e6f64..=0.0, Just(-0.0), Just(-f64::MIN_POSITIVE), Just(-5e-324)];
    (
        grid,
        prop::collection::vec((0..N_STATES, 0usize..7, successor(), -1000.0f64..=0.0, q), 0..40),
        1e-3f64..1.0,
        1e-3f64..1e5,
        0.01f64..0.999,
        prop::option::of((1usize..100_000, prop::option::of(1usize..100_000), -1000.0f64..0.0)),
    )
        .prop_map(|(grid, tr, e_range, edot_range, gamma, summary)| {
            let n = grid.len();
            let mut model = AgentModel::new(n, gamma).unwrap();
            for (s, a, next, r, q) in tr {
                let s = DiscreteState::from_index(s);
                model.record_transition(s, a % n, next, r);
                model.set_q(s, a % n, q);
            }
            PolicyArchive {
                grid,
                ranges: BinRanges { e_range, edot_range },
                model,
                summary: summary.map(|(episodes, converged_after, mean_return_last100)| {
                    ArchiveSummary {
                        episodes,
                        converged_after,
                        mean_return_last100,
                    }
                }),
            }
        })
}

pub fn archive_round_trip() -> Result<(), String> {
    run(archive(), |a| {
        let back = PolicyArchive::from_text(&a.to_text(), "prop").unwrap();
        prop_assert!(back == a, "archive changed on round trip");
        for (s, act, q, _) in a.model.observed() {
            prop_assert_eq!(back.model.q(s, act).to_bits(), q.to_bits());
        }
        for s in DiscreteState::all() {
            prop_assert_eq!(back.model.greedy_action(s), a.model.greedy_action(s));
        }
        Ok(())
    })
}

pub fn discretize_monotone() -> Result<(), String> {
    let strat = (-1.0f64..1.0, -1.0f64..1.0, -5e3f64..5e3, -5e3f64..5e3, 0.01f64..0.5, 1.0f64..2e3);
    run(strat, |(e1, e2, d1, d2, e_range, edot_range)| {
        let r = BinRanges { e_range, edot_range };
        let (elo, ehi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (dlo, dhi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let a = discretize_with(elo, dlo, r);
        let b = discretize_with(ehi, dhi, r);
        prop_assert!(a.e_bin <= b.e_bin && a.edot_bin <= b.edot_bin);
        prop_assert!(b.e_bin < 25 && b.edot_bin < 100);
        Ok(())
    })
}

pub fn modulation_directions() -> Result<(), String> {
    run((0.0f64..=1.0, 0.001f64..2.0), |(u, x_sp)| {
        let up = apply_modulation(u * 0.95, x_sp, Paradigm::IncreaseTracking).unwrap();
        let down = apply_modulation(u * 1.75, x_sp, Paradigm::DecreaseTracking).unwrap();
        prop_assert!(up <= x_sp);
        prop_assert!(down >= x_sp);
        prop_assert_eq!(apply_modulation(0.0, x_sp, Paradigm::Idle).unwrap(), x_sp);
        Ok(())
    })
}

pub fn spaace_three_values() -> Result<(), String> {
    run((0.01f64..0.99, -2.0f64..2.0, -3.0f64..3.0), |(m_fixed, x_sp, x_pred)| {
        let cfg = SpaaceConfig {
            m_fixed,
            t_pred: 4e-4,
            x_min: 0.8,
            x_max: 1.2,
            comm_step: 1e-4,
        };
        let v = spaace_decide(&cfg, x_sp, x_pred);
        let allowed = [(1.0 + m_fixed) * x_sp, (1.0 - m_fixed) * x_sp, x_sp];
        prop_assert!(allowed.contains(&v), "{v} not in {allowed:?}");
        Ok(())
    })
}

pub fn predictor_affine() -> Result<(), String> {
    // dyadic values keep the arithmetic exact
    let strat = (-64i32..64, -64i32..64, 1u32..8, 1u32..8, 0i32..64);
    run(strat, |(a, b, dt_pow, ratio, k)| {
        let dt = 2f64.powi(-(dt_pow as i32));
        let t_pred = dt * ratio as f64;
        let slope = a as f64 / 4.0;
        let x = |t: f64| slope * t + b as f64;
        let t = k as f64 * dt;
        let got = linear_predict(x(t), x(t - dt), dt, t_pred);
        prop_assert_eq!(got, x(t + t_pred));
        Ok(())
    })
}
