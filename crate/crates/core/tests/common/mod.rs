#![allow(dead_code, clippy::needless_range_loop)]

//! Synthetic finite MDPs and an independent value-iteration oracle.

pub mod props;

use rand::Rng;

use setpoint_rl::learner::{
    seeded_rng, train_episode, Environment, SimRng, StepOutcome, TerminalKind,
};
use setpoint_rl::mdp::{ActionGrid, AgentModel, DiscreteState, Successor};
use setpoint_rl::metrics::EpisodeTrace;
use setpoint_rl::modulation::Paradigm;
use setpoint_rl::Result;

/// One possible outcome of taking an action: probability, successor
/// (`None` = terminal) and reward.
#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub p: f64,
    pub next: Option<usize>,
    pub r: f64,
}

#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub name: &'static str,
    pub n_states: usize,
    pub n_actions: usize,
    /// `table[s][a]` lists the outcomes of `a` in `s`.
    pub table: Vec<Vec<Vec<Outcome>>>,
    pub max_steps: usize,
}

fn det(next: Option<usize>, r: f64) -> Vec<Outcome> {
    vec![Outcome { p: 1.0, next, r }]
}

impl TabularMdp {
    /// Five states in a row; action 1 moves right, action 0 left. Leaving
    /// the right end terminates.
    pub fn chain5() -> Self {
        let n = 5;
        let table = (0..n)
            .map(|s: usize| {
                let left = det(Some(s.saturating_sub(1)), -1.0);
                let right = if s + 1 == n { det(None, -1.0) } else { det(Some(s + 1), -1.0) };
                vec![left, right]
            })
            .collect();
        TabularMdp {
            name: "deterministic 5-state chain",
            n_states: n,
            n_actions: 2,
            table,
            max_steps: 40,
        }
    }

    /// Ten states; moves succeed with probability 0.8 and slip the other
    /// way otherwise. Action 2 stays put at a higher cost.
    pub fn stochastic_chain10() -> Self {
        let n = 10;
        let step = |s: usize, dir: i64| -> Option<usize> {
            let t = s as i64 + dir;
            if t >= n as i64 {
                None
            } else {
                Some(t.max(0) as usize)
            }
        };
        let table = (0..n)
            .map(|s| {
                let right = vec![
                    Outcome { p: 0.8, next: step(s, 1), r: -1.0 },
                    Outcome { p: 0.2, next: step(s, -1), r: -1.0 },
                ];
                let left = vec![
                    Outcome { p: 0.8, next: step(s, -1), r: -1.0 },
                    Outcome { p: 0.2, next: step(s, 1), r: -1.0 },
                ];
                let stay = det(Some(s), -2.0);
                vec![left, right, stay]
            })
            .collect();
        TabularMdp {
            name: "stochastic 10-state chain",
            n_states: n,
            n_actions: 3,
            table,
            max_steps: 80,
        }
    }

    /// 4x4 grid, goal in the corner (3, 3), a trap at (1, 2) that ends the
    /// episode with -1000. Actions: up, down, left, right; walls block.
    pub fn gridworld4() -> Self {
        let idx = |r: usize, c: usize| r * 4 + c;
        let goal = idx(3, 3);
        let trap = idx(1, 2);
        let mut table = Vec::new();
        for s in 0..16 {
            let (r, c) = (s / 4, s % 4);
            let mut acts = Vec::new();
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let nr = (r as i64 + dr).clamp(0, 3) as usize;
                let nc = (c as i64 + dc).clamp(0, 3) as usize;
                let t = idx(nr, nc);
                acts.push(if s == goal || s == trap {
                    // never entered; kept for a square table
                    det(None, 0.0)
                } else if t == goal {
                    det(None, -1.0)
                } else if t == trap {
                    det(None, -1000.0)
                } else {
                    det(Some(t), -1.0)
                });
            }
            table.push(acts);
        }
        TabularMdp {
            name: "4x4 gridworld with trap",
            n_states: 16,
            n_actions: 4,
            table,
            max_steps: 60,
        }
    }

    /// States an episode may start in.
    pub fn start_states(&self) -> Vec<usize> {
        if self.name.starts_with("4x4") {
            (0..16).filter(|&s| s != 15 && s != 6).collect()
        } else {
            (0..self.n_states).collect()
        }
    }

    pub fn grid(&self) -> ActionGrid {
        ActionGrid::uniform(Paradigm::DisturbanceRejection, -0.8, 0.8, self.n_actions)
    }

    /// Exact Q* by value iteration on the true model.
    pub fn value_iteration(&self, gamma: f64) -> Vec<Vec<f64>> {
        let mut q = vec![vec![0.0; self.n_actions]; self.n_states];
        loop {
            let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).collect();
            let mut delta: f64 = 0.0;
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let new: f64 = self.table[s][a]
                        .iter()
                        .map(|o| o.p * (o.r + gamma * o.next.map_or(0.0, |n| v[n])))
                        .sum();
                    delta = delta.max((new - q[s][a]).abs());
                    q[s][a] = new;
                }
            }
            if delta < 1e-13 {
                return q;
            }
        }
    }
}

/// Q* of the empirical model the agent has built, by value iteration.
/// Unvisited pairs keep q = 0, as in the agent.
pub fn empirical_value_iteration(model: &AgentModel, n_states: usize) -> Vec<Vec<f64>> {
    let na = model.n_actions();
    let gamma = model.gamma();
    let mut q = vec![vec![0.0; na]; n_states];
    let s_of = DiscreteState::from_index;
    loop {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).collect();
        let mut delta: f64 = 0.0;
        for s in 0..n_states {
            for a in 0..na {
                if model.visits(s_of(s), a) == 0 {
                    continue;
                }
                let future: f64 = model
                    .transition_probs(s_of(s), a)
                    .iter()
                    .map(|(succ, p)| match succ {
                        Successor::Terminal => 0.0,
                        Successor::State(n) => p * v[n.index()],
                    })
                    .sum();
                let new = model.mean_reward(s_of(s), a) + gamma * future;
                delta = delta.max((new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        if delta < 1e-13 {
            return q;
        }
    }
}

/// Greedy action with lowest-index tie-break, plus the gap to the runner-up.
pub fn argmax_gap(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for a in 1..row.len() {
        if row[a] > row[best] {
            best = a;
        }
    }
    let second = row
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != best)
        .map(|(_, &v)| v)
        .fold(f64::MIN, f64::max);
    (best, row[best] - second)
}

/// One episode on a [`TabularMdp`].
pub struct MdpEpisode<'a> {
    mdp: &'a TabularMdp,
    s: usize,
    steps: usize,
}

impl<'a> MdpEpisode<'a> {
    pub fn new(mdp: &'a TabularMdp) -> Self {
        MdpEpisode { mdp, s: 0, steps: 0 }
    }
}

impl Environment for MdpEpisode<'_> {
    fn start(&mut self, rng: &mut SimRng) -> Result<Option<DiscreteState>> {
        let starts = self.mdp.start_states();
        self.s = starts[rng.gen_range(0..starts.len())];
        self.steps = 0;
        Ok(Some(DiscreteState::from_index(self.s)))
    }

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<StepOutcome> {
        let outcomes = &self.mdp.table[self.s][action];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = outcomes[outcomes.len() - 1];
        for o in outcomes {
            acc += o.p;
            if u < acc {
                pick = *o;
                break;
            }
        }
        self.steps += 1;
        Ok(match pick.next {
            None => StepOutcome {
                reward: pick.r,
                next: Successor::Terminal,
                kind: if pick.r <= -1000.0 {
                    TerminalKind::BandViolation
                } else {
                    TerminalKind::SettledOk
                },
            },
            Some(n) => {
                self.s = n;
                StepOutcome {
                    reward: pick.r,
                    next: Successor::State(DiscreteState::from_index(n)),
                    kind: if self.steps >= self.mdp.max_steps {
                        TerminalKind::TimeUp
                    } else {
                        TerminalKind::Continue
                    },
                }
            }
        })
    }

    fn trace(&self) -> EpisodeTrace {
        EpisodeTrace::new(Vec::new())
    }
}

#[derive(Debug)]
pub struct OracleReport {
    pub name: &'static str,
    pub episodes: usize,
    pub min_visits: u64,
    pub compared: usize,
    pub policy_mismatches: usize,
    /// Largest |q - q*| against the empirical model's fixed point.
    pub q_err_empirical: f64,
    /// Largest |q - q*| against the true model.
    pub q_err_true: f64,
}

impl OracleReport {
    pub fn ok(&self, q_tol: f64) -> bool {
        self.min_visits >= 50 && self.policy_mismatches == 0 && self.q_err_empirical <= q_tol
    }
}

/// Train with ε = 1 until every reachable (s, a) has at least `min_visits`
/// visits, then compare against value iteration on the true model (policy)
/// and on the agent's own empirical model (q values).
pub fn rtdp_vs_oracle(mdp: &TabularMdp, gamma: f64, seed: u64, min_visits: u64) -> (AgentModel, OracleReport) {
    let grid = mdp.grid();
    let mut model = AgentModel::new(mdp.n_actions, gamma).unwrap();
    let mut rng = seeded_rng(seed);
    let pairs: Vec<(usize, usize)> = mdp
        .start_states()
        .into_iter()
        .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
        .collect();
    let min_v = |m: &AgentModel| {
        pairs
            .iter()
            .map(|&(s, a)| m.visits(DiscreteState::from_index(s), a))
            .min()
            .unwrap()
    };
    let mut episodes = 0;
    while min_v(&model) < min_visits {
        let mut env = MdpEpisode::new(mdp);
        train_episode(&mut model, &mut env, &grid, &mut rng, 1.0).unwrap();
        episodes += 1;
    }
    let truth = mdp.value_iteration(gamma);
    let emp = empirical_value_iteration(&model, mdp.n_states);
    let mut compared = 0;
    let mut mismatches = 0;
    let mut err_emp: f64 = 0.0;
    let mut err_true: f64 = 0.0;
    for s in mdp.start_states() {
        let ds = DiscreteState::from_index(s);
        let (best, gap) = argmax_gap(&truth[s]);
        if gap > 1e-6 {
            compared += 1;
            if model.greedy_action(ds) != best {
                mismatches += 1;
            }
        }
        for a in 0..mdp.n_actions {
            err_emp = err_emp.max((model.q(ds, a) - emp[s][a]).abs());
            err_true = err_true.max((model.q(ds, a) - truth[s][a]).abs());
        }
    }
    let report = OracleReport {
        name: mdp.name,
        episodes,
        min_visits: min_v(&model),
        compared,
        policy_mismatches: mismatches,
        q_err_empirical: err_emp,
        q_err_true: err_true,
    };
    (model, report)
}
