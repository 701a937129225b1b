//! Episodic training by real-time dynamic programming.
//!
//! Each step of an episode records one transition into the empirical model and
//! backs up exactly that state-action pair. Exploration is ε-greedy with ε
//! decaying linearly over the first half of the run. Convergence is judged by
//! the greedy decision matrix staying unchanged for a window of episodes.

pub mod agent;
pub mod env;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionGrid, AgentModel, DiscreteState, Successor, EDOT_BINS, E_BINS, N_STATES};
use crate::metrics::EpisodeTrace;
use crate::modulation::Paradigm;

pub use agent::{
    AgentRuntime, Observation, PolicySet, RlController, TerminalConfig, TerminalKind,
    TerminalMonitor, Transition,
};

/// The single pseudo-random stream type used for scenarios and exploration.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `n_episodes` over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Taken from the experiment seed, never from the `[train]` section.
    #[serde(skip)]
    pub seed: u64,
    /// Settling deadband as a fraction of the set-point basis (floored at 0.1 pu).
    pub terminal_deadband: f64,
    /// Consecutive unchanged decision matrices that end training early.
    /// `None` disables early stopping.
    pub convergence_window: Option<usize>,
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_episodes: 2000,
            epsilon_start: 0.3,
            epsilon_end: 0.1,
            epsilon_decay_fraction: 0.5,
            seed: 0x5eed,
            terminal_deadband: 0.01,
            convergence_window: Some(400),
            gamma: 0.95,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        let key = |f: &str| format!("{section}.{f}");
        if self.n_episodes < 1 {
            return Err(Error::config(key("n_episodes"), "must be >= 1"));
        }
        if !(0.0 <= self.epsilon_end
            && self.epsilon_end <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return Err(Error::config(
                key("epsilon_start"),
                "need 0 <= epsilon_end <= epsilon_start <= 1",
            ));
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return Err(Error::config(key("epsilon_decay_fraction"), "must lie in (0, 1]"));
        }
        if !(self.terminal_deadband > 0.0) {
            return Err(Error::config(key("terminal_deadband"), "must be > 0"));
        }
        if self.convergence_window == Some(0) {
            return Err(Error::config(key("convergence_window"), "must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(
                key("gamma"),
                "γ is required to be less than 1 (and greater than 0)",
            ));
        }
        Ok(())
    }

    /// Exploration rate for episode `episode` (0-based).
    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = (self.epsilon_decay_fraction * self.n_episodes as f64).max(1.0);
        let frac = (episode as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn terminal(&self, duration: f64) -> TerminalConfig {
        TerminalConfig {
            deadband_fraction: self.terminal_deadband,
            ..TerminalConfig::new(duration)
        }
    }
}

/// ε-greedy choice; exploration is uniform over the whole grid.
pub fn select_action(
    model: &AgentModel,
    s: DiscreteState,
    grid: &ActionGrid,
    epsilon: f64,
    rng: &mut SimRng,
) -> usize {
    let coin: f64 = rng.gen();
    if coin < epsilon {
        rng.gen_range(0..grid.len())
    } else {
        model.greedy_action(s)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next: Successor,
    pub kind: TerminalKind,
}

/// An episodic decision process the learner can drive.
pub trait Environment {
    /// Advance to the first decision. `None` when the episode needs none.
    fn start(&mut self, rng: &mut SimRng) -> Result<Option<DiscreteState>>;
    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<StepOutcome>;
    fn trace(&self) -> EpisodeTrace {
        EpisodeTrace::default()
    }
}

/// Produces a fresh episode per call, drawing any randomness from `rng`.
pub trait EpisodeSource {
    fn grid(&self) -> &ActionGrid;
    fn next_episode(&mut self, rng: &mut SimRng) -> Result<Box<dyn Environment + '_>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epsilon: f64,
    /// Undiscounted sum of rewards.
    pub ret: f64,
    pub kind: TerminalKind,
    pub steps: usize,
    /// Decisions where the chosen action differed from the greedy one.
    pub explored: usize,
    /// Decision-matrix cells that changed during this episode.
    pub matrix_changes: usize,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub ret: f64,
    pub kind: TerminalKind,
    pub steps: usize,
    pub explored: usize,
    pub trace: EpisodeTrace,
}

/// Run one episode, updating the model along the visited trajectory only.
pub fn train_episode(
    model: &mut AgentModel,
    env: &mut dyn Environment,
    grid: &ActionGrid,
    rng: &mut SimRng,
    epsilon: f64,
) -> Result<EpisodeResult> {
    let mut ret = 0.0;
    let mut steps = 0;
    let mut explored = 0;
    let mut kind = TerminalKind::TimeUp;
    let mut state = env.start(rng)?;
    while let Some(s) = state {
        let a = select_action(model, s, grid, epsilon, rng);
        if a != model.greedy_action(s) {
            explored += 1;
        }
        let out = env.step(a, rng)?;
        model.record_transition(s, a, out.next, out.reward);
        model.q_backup(s, a)?;
        ret += out.reward;
        steps += 1;
        kind = out.kind;
        state = match out.next {
            Successor::State(next) if !out.kind.is_terminal() => Some(next),
            _ => None,
        };
    }
    Ok(EpisodeResult {
        ret,
        kind,
        steps,
        explored,
        trace: env.trace(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub paradigm: Paradigm,
    pub episodes: Vec<EpisodeRecord>,
    /// Episode count at which the decision matrix was judged stable.
    pub converged_after: Option<usize>,
}

impl TrainingReport {
    pub fn mean_return(&self, last: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(last)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|r| r.ret).sum::<f64>() / tail.len() as f64
    }

    pub fn count(&self, kind: TerminalKind) -> usize {
        self.episodes.iter().filter(|r| r.kind == kind).count()
    }
}

/// Tracks consecutive episodes without a decision-matrix change.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    window: Option<usize>,
    last: Option<DecisionMatrix>,
    stable_for: usize,
}

impl ConvergenceMonitor {
    pub fn new(window: Option<usize>) -> Self {
        ConvergenceMonitor {
            window,
            last: None,
            stable_for: 0,
        }
    }

    /// Feed the matrix after an episode; returns (changed cells, converged).
    pub fn update(&mut self, dm: DecisionMatrix) -> (usize, bool) {
        let changes = match &self.last {
            Some(prev) => prev.diff_count(&dm),
            None => dm.cells.iter().filter(|c| c.is_some()).count(),
        };
        if changes == 0 {
            self.stable_for += 1;
        } else {
            self.stable_for = 0;
        }
        self.last = Some(dm);
        let converged = self.window.is_some_and(|w| self.stable_for >= w);
        (changes, converged)
    }
}

/// Train `model` on episodes from `source` under `cfg`.
pub fn train(
    model: &mut AgentModel,
    source: &mut dyn EpisodeSource,
    cfg: &TrainConfig,
) -> Result<TrainingReport> {
    cfg.validate("train")?;
    let grid = source.grid().clone();
    if grid.len() != model.n_actions() {
        return Err(Error::config("train", "model and action grid disagree on size"));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_window);
    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    let mut converged_after = None;
    for ep in 0..cfg.n_episodes {
        let epsilon = cfg.epsilon(ep);
        let res = {
            let mut env = source.next_episode(&mut rng)?;
            train_episode(model, env.as_mut(), &grid, &mut rng, epsilon)?
        };
        let (matrix_changes, converged) = monitor.update(decision_matrix(model, &grid));
        episodes.push(EpisodeRecord {
            episode: ep,
            epsilon,
            ret: res.ret,
            kind: res.kind,
            steps: res.steps,
            explored: res.explored,
            matrix_changes,
        });
        if converged {
            converged_after = Some(ep + 1);
            break;
        }
    }
    Ok(TrainingReport {
        paradigm: grid.paradigm,
        episodes,
        converged_after,
    })
}

/// Greedy action per discrete state; `None` where no action was ever tried.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionMatrix {
    pub paradigm: Paradigm,
    /// Row-major over `(e_bin, edot_bin)`.
    pub cells: Vec<Option<u8>>,
}

impl DecisionMatrix {
    pub fn unvisited(paradigm: Paradigm) -> Self {
        DecisionMatrix {
            paradigm,
            cells: vec![None; N_STATES],
        }
    }

    pub fn get(&self, e_bin: usize, edot_bin: usize) -> Option<u8> {
        self.cells[e_bin * EDOT_BINS + edot_bin]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<u8>]> {
        self.cells.chunks(EDOT_BINS)
    }

    pub fn diff_count(&self, other: &DecisionMatrix) -> usize {
        self.cells
            .iter()
            .zip(&other.cells)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn visited_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (E_BINS, EDOT_BINS)
    }
}

pub fn decision_matrix(model: &AgentModel, grid: &ActionGrid) -> DecisionMatrix {
    let cells = DiscreteState::all()
        .map(|s| model.state_visited(s).then(|| model.greedy_action(s) as u8))
        .collect();
    DecisionMatrix {
        paradigm: grid.paradigm,
        cells,
    }
}
