//! Tabular MDP over (error, error-rate) bins.
//!
//! Holds the state discretization, the per-paradigm action grids, the reward,
//! and the empirical model: successor counts and mean rewards per state-action
//! pair, with the Bellman backup applied one pair at a time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::Paradigm;

pub const E_BINS: usize = 25;
pub const EDOT_BINS: usize = 100;
pub const N_STATES: usize = E_BINS * EDOT_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiscreteState {
    pub e_bin: usize,
    pub edot_bin: usize,
}

impl DiscreteState {
    pub fn new(e_bin: usize, edot_bin: usize) -> Self {
        debug_assert!(e_bin < E_BINS && edot_bin < EDOT_BINS);
        DiscreteState { e_bin, edot_bin }
    }

    pub fn index(self) -> usize {
        self.e_bin * EDOT_BINS + self.edot_bin
    }

    pub fn from_index(i: usize) -> Self {
        DiscreteState {
            e_bin: i / EDOT_BINS,
            edot_bin: i % EDOT_BINS,
        }
    }

    pub fn all() -> impl Iterator<Item = DiscreteState> {
        (0..N_STATES).map(DiscreteState::from_index)
    }
}

/// Where a transition landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Successor {
    State(DiscreteState),
    /// Episode end; contributes no future value.
    Terminal,
}

/// Ordered, strictly increasing set of scaling factors for one paradigm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub paradigm: Paradigm,
    pub values: Vec<f64>,
}

impl ActionGrid {
    /// Five, five, and seven evenly spaced values (endpoints included) over
    /// the paradigm's range.
    pub fn for_paradigm(paradigm: Paradigm) -> Result<Self> {
        let n = match paradigm {
            Paradigm::IncreaseTracking | Paradigm::DecreaseTracking => 5,
            Paradigm::DisturbanceRejection => 7,
            Paradigm::Idle => {
                return Err(Error::config("paradigm", "idle has no action grid"));
            }
        };
        let (lo, hi) = paradigm.m_range();
        Ok(ActionGrid::uniform(paradigm, lo, hi, n))
    }

    pub fn uniform(paradigm: Paradigm, lo: f64, hi: f64, n: usize) -> Self {
        let values = if n == 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i + 1 == n {
                        hi
                    } else {
                        (lo * (n - 1 - i) as f64 + hi * i as f64) / (n - 1) as f64
                    }
                })
                .collect()
        };
        ActionGrid { paradigm, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn m(&self, action: usize) -> f64 {
        self.values[action]
    }

    /// Index of the identity action (`m = 0`), if the grid has one.
    pub fn identity(&self) -> Option<usize> {
        self.values.iter().position(|&m| m == 0.0)
    }
}

/// Symmetric binning ranges for one paradigm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinRanges {
    pub e_range: f64,
    pub edot_range: f64,
}

impl BinRanges {
    pub fn validate(&self, key: &str) -> Result<()> {
        if !(self.e_range > 0.0) || !self.e_range.is_finite() {
            return Err(Error::config(format!("{key}.e_range"), "must be > 0"));
        }
        if !(self.edot_range > 0.0) || !self.edot_range.is_finite() {
            return Err(Error::config(format!("{key}.edot_range"), "must be > 0"));
        }
        Ok(())
    }
}

/// Per-paradigm binning ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParadigmRanges {
    pub increase: BinRanges,
    pub decrease: BinRanges,
    pub disturbance: BinRanges,
}

impl ParadigmRanges {
    pub fn get(&self, paradigm: Paradigm) -> Option<BinRanges> {
        match paradigm {
            Paradigm::IncreaseTracking => Some(self.increase),
            Paradigm::DecreaseTracking => Some(self.decrease),
            Paradigm::DisturbanceRejection => Some(self.disturbance),
            Paradigm::Idle => None,
        }
    }

    pub fn set(&mut self, paradigm: Paradigm, r: BinRanges) {
        match paradigm {
            Paradigm::IncreaseTracking => self.increase = r,
            Paradigm::DecreaseTracking => self.decrease = r,
            Paradigm::DisturbanceRejection => self.disturbance = r,
            Paradigm::Idle => {}
        }
    }
}

fn bin(v: f64, range: f64, n: usize) -> usize {
    let pos = ((v + range) / (2.0 * range) * n as f64).floor();
    if pos.is_nan() || pos < 0.0 {
        0
    } else {
        (pos as usize).min(n - 1)
    }
}

/// Uniform half-open binning; values outside the range land in the edge bins.
pub fn discretize_with(e: f64, edot: f64, ranges: BinRanges) -> DiscreteState {
    DiscreteState {
        e_bin: bin(e, ranges.e_range, E_BINS),
        edot_bin: bin(edot, ranges.edot_range, EDOT_BINS),
    }
}

pub fn discretize(
    e: f64,
    edot: f64,
    paradigm: Paradigm,
    ranges: &ParadigmRanges,
) -> Result<DiscreteState> {
    let r = ranges
        .get(paradigm)
        .ok_or_else(|| Error::config("paradigm", "idle has no discretization"))?;
    Ok(discretize_with(e, edot, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Penalty on set-point motion between steps.
    pub lambda: f64,
    /// Survival band as a fraction of the set-point basis.
    pub band_fraction: f64,
    pub fail_reward: f64,
    /// Floor on `|x_sp|` when forming the band.
    pub sp_basis_floor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda: 0.1,
            band_fraction: 0.2,
            fail_reward: -1000.0,
            sp_basis_floor: 0.1,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::config(format!("{section}.lambda"), "must be >= 0"));
        }
        if !(self.band_fraction > 0.0) {
            return Err(Error::config(format!("{section}.band_fraction"), "must be > 0"));
        }
        if !(self.fail_reward <= 0.0) {
            return Err(Error::config(format!("{section}.fail_reward"), "must be <= 0"));
        }
        if !(self.sp_basis_floor > 0.0) {
            return Err(Error::config(format!("{section}.sp_basis_floor"), "must be > 0"));
        }
        Ok(())
    }

    pub fn basis(&self, x_sp: f64) -> f64 {
        x_sp.abs().max(self.sp_basis_floor)
    }

    /// Half-width of the survival band around the set point.
    pub fn band(&self, x_sp: f64) -> f64 {
        self.band_fraction * self.basis(x_sp)
    }
}

/// Per-step reward: tracking error plus a set-point-motion penalty inside the
/// band, the fail reward outside it.
pub fn reward(e: f64, delta_m: f64, x_sp: f64, cfg: &RewardConfig) -> f64 {
    if e.abs() <= cfg.band(x_sp) {
        tracking_penalty(e, delta_m, cfg)
    } else {
        cfg.fail_reward
    }
}

/// The in-band branch of [`reward`]: `-|e| - λ|Δm|`.
pub fn tracking_penalty(e: f64, delta_m: f64, cfg: &RewardConfig) -> f64 {
    -e.abs() - cfg.lambda * delta_m.abs()
}

/// Statistics for one state-action pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairStats {
    pub visits: u64,
    pub reward_sum: f64,
    /// Successor visit counts, kept sorted by successor.
    pub successors: Vec<(Successor, u64)>,
}

impl PairStats {
    pub fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.reward_sum / self.visits as f64
        }
    }
}

/// Empirical transition model plus Q-table for one paradigm.
#[derive(Debug, Clone)]
pub struct AgentModel {
    n_actions: usize,
    gamma: f64,
    q: Vec<f64>,
    stats: Vec<PairStats>,
    q_writes: u64,
}

/// Models are equal when their tables match bit for bit; the write counter
/// is instrumentation and ignored.
impl PartialEq for AgentModel {
    fn eq(&self, other: &Self) -> bool {
        self.n_actions == other.n_actions
            && self.gamma.to_bits() == other.gamma.to_bits()
            && self.q.len() == other.q.len()
            && self.q.iter().zip(&other.q).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.stats == other.stats
    }
}

impl AgentModel {
    pub fn new(n_actions: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(
                "train.gamma",
                "γ is required to be less than 1 (and greater than 0)",
            ));
        }
        if n_actions == 0 {
            return Err(Error::config("actions", "grid is empty"));
        }
        Ok(AgentModel {
            n_actions,
            gamma,
            q: vec![0.0; N_STATES * n_actions],
            stats: vec![PairStats::default(); N_STATES * n_actions],
            q_writes: 0,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn slot(&self, s: DiscreteState, a: usize) -> usize {
        debug_assert!(a < self.n_actions);
        s.index() * self.n_actions + a
    }

    pub fn q(&self, s: DiscreteState, a: usize) -> f64 {
        self.q[self.slot(s, a)]
    }

    /// Overwrite a Q entry. Used when restoring archives and by tests.
    pub fn set_q(&mut self, s: DiscreteState, a: usize, value: f64) {
        let i = self.slot(s, a);
        self.q[i] = value;
    }

    pub fn stats(&self, s: DiscreteState, a: usize) -> &PairStats {
        &self.stats[self.slot(s, a)]
    }

    pub fn set_stats(&mut self, s: DiscreteState, a: usize, stats: PairStats) {
        let i = self.slot(s, a);
        self.stats[i] = stats;
    }

    pub fn visits(&self, s: DiscreteState, a: usize) -> u64 {
        self.stats(s, a).visits
    }

    /// True when any action has been tried in `s`.
    pub fn state_visited(&self, s: DiscreteState) -> bool {
        (0..self.n_actions).any(|a| self.visits(s, a) > 0)
    }

    /// Number of Q writes performed by [`AgentModel::q_backup`].
    pub fn q_writes(&self) -> u64 {
        self.q_writes
    }

    /// Iterate observed pairs in (state, action) order.
    pub fn observed(&self) -> impl Iterator<Item = (DiscreteState, usize, f64, &PairStats)> + '_ {
        self.stats.iter().enumerate().filter(|(_, st)| st.visits > 0).map(|(i, st)| {
            (
                DiscreteState::from_index(i / self.n_actions),
                i % self.n_actions,
                self.q[i],
                st,
            )
        })
    }

    pub fn record_transition(&mut self, s: DiscreteState, a: usize, next: Successor, r: f64) {
        let i = self.slot(s, a);
        let st = &mut self.stats[i];
        st.visits += 1;
        st.reward_sum += r;
        match st.successors.binary_search_by(|(succ, _)| succ.cmp(&next)) {
            Ok(j) => st.successors[j].1 += 1,
            Err(j) => st.successors.insert(j, (next, 1)),
        }
    }

    /// Empirical `P(s'|s,a)` over observed successors.
    pub fn transition_probs(&self, s: DiscreteState, a: usize) -> Vec<(Successor, f64)> {
        let st = self.stats(s, a);
        let n = st.visits as f64;
        st.successors
            .iter()
            .map(|&(succ, c)| (succ, c as f64 / n))
            .collect()
    }

    pub fn mean_reward(&self, s: DiscreteState, a: usize) -> f64 {
        self.stats(s, a).mean_reward()
    }

    /// `max_a q(s, a)` with unvisited pairs at their default of zero.
    pub fn state_value(&self, s: DiscreteState) -> f64 {
        let base = s.index() * self.n_actions;
        self.q[base..base + self.n_actions]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bellman backup of one observed pair against the current empirical model.
    pub fn q_backup(&mut self, s: DiscreteState, a: usize) -> Result<f64> {
        let i = self.slot(s, a);
        let st = &self.stats[i];
        if st.visits == 0 {
            return Err(Error::Unobserved {
                e_bin: s.e_bin,
                edot_bin: s.edot_bin,
                action: a,
            });
        }
        let n = st.visits as f64;
        let future: f64 = st
            .successors
            .iter()
            .map(|&(succ, c)| match succ {
                Successor::Terminal => 0.0,
                Successor::State(next) => c as f64 / n * self.state_value(next),
            })
            .sum();
        let value = st.mean_reward() + self.gamma * future;
        self.q[i] = value;
        self.q_writes += 1;
        Ok(value)
    }

    /// Greedy action; ties go to the lowest index, unvisited pairs count as zero.
    pub fn greedy_action(&self, s: DiscreteState) -> usize {
        let base = s.index() * self.n_actions;
        let row = &self.q[base..base + self.n_actions];
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }
}

pub fn greedy_action(model: &AgentModel, s: DiscreteState, grid: &ActionGrid) -> usize {
    debug_assert_eq!(model.n_actions(), grid.len());
    model.greedy_action(s)
}
