//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 3 to 7 calibrate, train and evaluate the presets in `configs/` in
//! memory, so this target takes about half a minute.

mod common;

use std::time::Instant;

use setpoint_rl::harness::run::AgentPolicies;
use setpoint_rl::harness::{calibrate, compare_case, train_case, Controller, ExperimentConfig};
use setpoint_rl::harness::run::{CaseMetrics, EvalOutcome};
use setpoint_rl::learner::decision_matrix;
use setpoint_rl::mdp::{
    discretize_with, reward, ActionGrid, AgentModel, BinRanges, DiscreteState, RewardConfig,
    Successor, EDOT_BINS, E_BINS, N_STATES,
};
use setpoint_rl::modulation::Paradigm;

use common::{rtdp_vs_oracle, TabularMdp};

type Verdict = (bool, String);

fn preset(case: u8) -> ExperimentConfig {
    let path = format!("{}/../../configs/case{case}.toml", env!("CARGO_MANIFEST_DIR"));
    ExperimentConfig::load(path.as_ref()).expect("preset loads")
}

struct Run {
    outcomes: Vec<EvalOutcome>,
    policies: AgentPolicies,
}

impl Run {
    fn metrics(&self, c: Controller, agent: usize) -> &CaseMetrics {
        &self
            .outcomes
            .iter()
            .find(|o| o.controller == c)
            .expect("controller evaluated")
            .metrics[agent]
    }
}

/// Calibrate, train and compare one preset.
fn run_case(case: u8) -> setpoint_rl::Result<(Run, ExperimentConfig)> {
    let (cfg, _) = calibrate(&preset(case))?;
    let trained = train_case(&cfg)?;
    let agents = trained.archives.iter().map(|(i, _)| i + 1).max().unwrap_or(0);
    let mut policies: AgentPolicies = vec![Vec::new(); agents];
    for (i, a) in trained.archives {
        policies[i].push(a);
    }
    let outcomes = compare_case(&cfg, &policies)?;
    Ok((Run { outcomes, policies }, cfg))
}

fn criterion1() -> Verdict {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (mdp, visits) in [
        (TabularMdp::chain5(), 50),
        (TabularMdp::stochastic_chain10(), 100_000),
        (TabularMdp::gridworld4(), 50),
    ] {
        let (_, r) = rtdp_vs_oracle(&mdp, 0.95, 11, visits);
        ok &= r.ok(1e-4);
        parts.push(format!(
            "{}: {} compared, {} mismatches, |dq| {:.1e} (vs true model {:.1e})",
            r.name, r.compared, r.policy_mismatches, r.q_err_empirical, r.q_err_true
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 10.0;
    (ok, format!("{}; {secs:.2} s", parts.join("; ")))
}

fn criterion2() -> Verdict {
    let cfg = RewardConfig::default();
    let r = [
        reward(0.1, 0.2, 1.0, &cfg),
        reward(0.25, 0.0, 1.0, &cfg),
        reward(0.0, 0.0, 1.0, &cfg),
    ];
    let rewards_ok = (r[0] + 0.12).abs() < 1e-15 && r[1] == -1000.0 && r[2] == 0.0;

    let s = DiscreteState::from_index;
    // s0 reaches the terminal or s1 (max q = -2) with equal odds
    let mut m = AgentModel::new(1, 0.9).expect("valid gamma");
    m.set_q(s(1), 0, -2.0);
    m.record_transition(s(1), 0, Successor::Terminal, -2.0);
    m.record_transition(s(0), 0, Successor::Terminal, -1.0);
    m.record_transition(s(0), 0, Successor::State(s(1)), -1.0);
    let q = m.q_backup(s(0), 0).expect("observed pair");
    let backup_ok = (q + 1.9).abs() < 1e-12;
    (
        rewards_ok && backup_ok,
        format!("rewards {:.4} / {} / {}, stochastic backup {q}", r[0], r[1], r[2].abs()),
    )
}

fn pct_drop(rl: f64, base: f64) -> f64 {
    100.0 * (base - rl) / base
}

fn criterion3(run: &Run, secs: f64) -> Verdict {
    let (rl, none) = (run.metrics(Controller::Rl, 0), run.metrics(Controller::None, 0));
    let under = |m: &CaseMetrics| m.peak_undershoot_pct.unwrap_or(f64::NAN);
    let base_ok = (60.0..=70.0).contains(&none.peak_overshoot_pct);
    let ok = base_ok
        && rl.peak_overshoot_pct <= 0.5 * none.peak_overshoot_pct
        && under(rl) <= 0.5 * under(none)
        && rl.cumulative_error <= none.cumulative_error
        && secs < 600.0;
    (
        ok,
        format!(
            "overshoot {:.2}% vs {:.2}%, undershoot {:.2}% vs {:.2}%, S_e {:.3} vs {:.3}; {secs:.1} s",
            rl.peak_overshoot_pct,
            none.peak_overshoot_pct,
            under(rl),
            under(none),
            rl.cumulative_error,
            none.cumulative_error
        ),
    )
}

fn criterion4(run: &Run, cfg: &ExperimentConfig) -> Verdict {
    let os = |c| run.metrics(c, 0).peak_overshoot_pct;
    let (rl, sp, none) = (os(Controller::Rl), os(Controller::Spaace), os(Controller::None));
    let s = cfg.spaace;
    let setup_ok = s.m_fixed == 0.4
        && (s.t_pred - 4.0 * s.comm_step).abs() < 1e-15
        && s.x_min == 0.8
        && s.x_max == 1.2;
    (
        setup_ok && rl < sp && sp < none,
        format!("overshoot rl {rl:.2}% < spaace {sp:.2}% < none {none:.2}%"),
    )
}

fn criterion5(load: &Run, fault: &Run) -> Verdict {
    let check = |run: &Run, need: f64| {
        let (rl, none) = (run.metrics(Controller::Rl, 0), run.metrics(Controller::None, 0));
        let drop = pct_drop(rl.peak_overshoot_pct, none.peak_overshoot_pct);
        let ok = drop >= need && rl.cumulative_error < none.cumulative_error;
        let msg = format!(
            "{:.2}% vs {:.2}% ({drop:.0}% lower), S_e {:.3} vs {:.3}",
            rl.peak_overshoot_pct, none.peak_overshoot_pct, rl.cumulative_error, none.cumulative_error
        );
        (ok, msg)
    };
    let (a, ma) = check(load, 25.0);
    let (b, mb) = check(fault, 15.0);
    (a && b, format!("load {ma}; fault {mb}"))
}

fn criterion6(run: &Run) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for agent in 0..2 {
        let os = run.metrics(Controller::Rl, agent).peak_overshoot_pct;
        ok &= os < 15.0;
        parts.push(format!("agent {agent} overshoot {os:.2}%"));
    }
    let dm: Vec<_> = run
        .policies
        .iter()
        .map(|v| decision_matrix(&v[0].model, &v[0].grid))
        .collect();
    let differ = dm[0].diff_count(&dm[1]);
    ok &= differ > 0;
    parts.push(format!("decision matrices differ in {differ} cells"));
    (ok, parts.join(", "))
}

fn criterion7(run: &Run) -> Verdict {
    let os = |c| run.metrics(c, 0).peak_overshoot_pct;
    let (rl, sp, none) = (os(Controller::Rl), os(Controller::Spaace), os(Controller::None));
    (
        rl < sp && rl < none,
        format!("overshoot rl {rl:.2}%, spaace {sp:.2}%, none {none:.2}%"),
    )
}

fn criterion8() -> Verdict {
    let t = Instant::now();
    let checks = common::props::all();
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(name, f)| f().err().map(|e| format!("{name}: {e}")))
        .collect();
    let secs = t.elapsed().as_secs_f64();
    (
        failed.is_empty() && secs < 120.0,
        if failed.is_empty() {
            format!(
                "{} properties x {} cases; {secs:.1} s",
                checks.len(),
                common::props::CASES
            )
        } else {
            failed.join("; ")
        },
    )
}

fn criterion9() -> Verdict {
    let mut ok = N_STATES == 2500 && E_BINS * EDOT_BINS == N_STATES;
    let indices: Vec<usize> = DiscreteState::all().map(|s| s.index()).collect();
    ok &= indices.len() == N_STATES && indices.iter().enumerate().all(|(i, &j)| i == j);
    ok &= DiscreteState::all().all(|s| DiscreteState::from_index(s.index()) == s);
    let r = BinRanges {
        e_range: 0.2,
        edot_range: 100.0,
    };
    for (e, edot) in [(-9.0, -9e9), (9.0, 9e9), (0.0, 0.0), (f64::MIN_POSITIVE, -1.0)] {
        ok &= discretize_with(e, edot, r).index() < N_STATES;
    }
    let mut parts = Vec::new();
    for (p, n, lo, hi) in [
        (Paradigm::IncreaseTracking, 5, 0.0, 0.95),
        (Paradigm::DecreaseTracking, 5, 0.0, 1.75),
        (Paradigm::DisturbanceRejection, 7, -0.8, 0.8),
    ] {
        let g = ActionGrid::for_paradigm(p).expect("active paradigm");
        let step = (hi - lo) / (n - 1) as f64;
        ok &= g.len() == n
            && g.values[0] == lo
            && g.values[n - 1] == hi
            && g.values.windows(2).all(|w| ((w[1] - w[0]) - step).abs() < 1e-12);
        parts.push(format!("{p} {}", g.len()));
    }
    (ok, format!("{N_STATES} states; grids {}", parts.join(", ")))
}

fn main() {
    let mut all_ok = true;
    let mut report = |n: u8, (ok, msg): Verdict| {
        all_ok &= ok;
        println!("{} criterion {n}: {msg}", if ok { "PASS" } else { "FAIL" });
    };
    let failed = |e: setpoint_rl::Error| (false, format!("run failed: {e}"));

    report(1, criterion1());
    report(2, criterion2());

    let t = Instant::now();
    match run_case(1) {
        Ok((run, cfg)) => {
            let secs = t.elapsed().as_secs_f64();
            report(3, criterion3(&run, secs));
            report(4, criterion4(&run, &cfg));
        }
        Err(e) => {
            report(3, failed(e));
            report(4, (false, "case 1 did not run".into()));
        }
    }
    match (run_case(3), run_case(4)) {
        (Ok((load, _)), Ok((fault, _))) => report(5, criterion5(&load, &fault)),
        (Err(e), _) | (_, Err(e)) => report(5, failed(e)),
    }
    report(6, run_case(2).map_or_else(failed, |(run, _)| criterion6(&run)));
    report(7, run_case(5).map_or_else(failed, |(run, _)| criterion7(&run)));
    report(8, criterion8());
    report(9, criterion9());

    if !all_ok {
        std::process::exit(1);
    }
}
