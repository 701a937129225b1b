//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::mdp::{BinRanges, ParadigmRanges, RewardConfig};
use crate::modulation::{Paradigm, SpaaceConfig};
use crate::scenarios::ScenarioParams;
use crate::sim::{LoopSpec, NestedLoopConfig, PiGains, PlantConfig};

/// Which case study a config reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    /// Set-point step up then down on one loop.
    Case1,
    /// Simultaneous steps on coupled loops.
    Case2,
    /// Load energization.
    Case3,
    /// Fault.
    Case4,
    /// Outer-loop voltage step on the nested loop.
    Case5,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::Case1 => "case1",
            Case::Case2 => "case2",
            Case::Case3 => "case3",
            Case::Case4 => "case4",
            Case::Case5 => "case5",
        }
    }

    /// Paradigms whose policies the case trains and evaluates.
    pub fn paradigms(self) -> &'static [Paradigm] {
        match self {
            Case::Case1 => &[Paradigm::IncreaseTracking, Paradigm::DecreaseTracking],
            Case::Case2 | Case::Case5 => &[Paradigm::IncreaseTracking],
            Case::Case3 | Case::Case4 => &[Paradigm::DisturbanceRejection],
        }
    }

    pub fn is_multi_agent(self) -> bool {
        self == Case::Case2
    }
}

/// PI gains as quoted, with the integral gain given per `ki_time_base` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub kp: f64,
    pub ki: f64,
    #[serde(default = "one")]
    pub ki_time_base: f64,
}

fn one() -> f64 {
    1.0
}

impl GainsSpec {
    pub fn resolve(&self, section: &str) -> Result<PiGains> {
        if !(self.ki_time_base > 0.0) {
            return Err(Error::config(format!("{section}.ki_time_base"), "must be > 0"));
        }
        let g = PiGains {
            kp: self.kp,
            ki: self.ki / self.ki_time_base,
        };
        g.validate(section)?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedSection {
    pub outer_tau: f64,
    #[serde(default = "one")]
    pub outer_gain: f64,
    pub outer_ref_limit: f64,
    pub outer_gains: GainsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiSection {
    pub coupling: f64,
    /// Gains of the agents after the first, whose gains are `[gains]`.
    /// All agents share `[plant]`.
    pub others: Vec<GainsSpec>,
    /// Per-agent binning ranges, filled in by `calibrate`.
    #[serde(default)]
    pub ranges: Vec<ParadigmRanges>,
}

/// Targets that `calibrate` tunes the no-action baseline towards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTargets {
    /// Case 1/2 step-up overshoot (%).
    pub step_overshoot: f64,
    pub step_window: (f64, f64),
    /// Case 3 load overshoot (%).
    pub load_overshoot: f64,
    /// Case 4 fault overshoot (%).
    pub fault_overshoot: f64,
    /// Case 5 outer-loop overshoot (%).
    pub voltage_overshoot: f64,
    pub voltage_window: (f64, f64),
    /// Ratio between the largest and smallest mapped disturbance.
    pub disturbance_span: f64,
    /// Margin applied to the largest observed error rate.
    pub edot_margin: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            step_overshoot: 65.7,
            step_window: (60.0, 70.0),
            load_overshoot: 27.0,
            fault_overshoot: 48.3,
            voltage_overshoot: 42.2,
            voltage_window: (35.0, 50.0),
            disturbance_span: 10.0,
            edot_margin: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: Case,
    pub seed: u64,
    pub output: PathBuf,
    pub plant: PlantConfig,
    pub gains: GainsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nested: Option<NestedSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi: Option<MultiSection>,
    #[serde(default)]
    pub scenario: ScenarioParams,
    #[serde(default)]
    pub train: TrainConfig,
    pub spaace: SpaaceConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<ParadigmRanges>,
    #[serde(default)]
    pub calibration: CalibrationTargets,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { key, reason } => Error::Config {
                key,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Structural validation; binning ranges are checked separately since
    /// `calibrate` runs without them.
    pub fn validate(&self) -> Result<()> {
        self.loop_spec()?.validate()?;
        self.scenario.validate("scenario")?;
        self.train.validate("train")?;
        self.spaace.validate("spaace")?;
        self.reward.validate("reward")?;
        if self.output.as_os_str().is_empty() {
            return Err(Error::config("output", "must not be empty"));
        }
        match self.case {
            Case::Case5 if self.nested.is_none() => {
                return Err(Error::config("nested", "case5 needs a [nested] section"));
            }
            Case::Case2 => {
                let m = self
                    .multi
                    .as_ref()
                    .ok_or_else(|| Error::config("multi", "case2 needs a [multi] section"))?;
                if m.others.is_empty() {
                    return Err(Error::config("multi.others", "need at least two agents"));
                }
                if !(0.0..=0.2).contains(&m.coupling) {
                    return Err(Error::config("multi.coupling", "must lie in [0, 0.2]"));
                }
                for (i, g) in m.others.iter().enumerate() {
                    g.resolve(&format!("multi.others[{i}]"))?;
                }
                if !m.ranges.is_empty() && m.ranges.len() != m.others.len() + 1 {
                    return Err(Error::config(
                        "multi.ranges",
                        "need one entry per agent (run calibrate)",
                    ));
                }
            }
            _ => {}
        }
        if let Some(r) = &self.ranges {
            validate_ranges(r, "ranges")?;
        }
        if let Some(m) = &self.multi {
            for (i, r) in m.ranges.iter().enumerate() {
                validate_ranges(r, &format!("multi.ranges[{i}]"))?;
            }
        }
        let t = self.calibration;
        if !(t.step_window.0 < t.step_window.1) || !(t.voltage_window.0 < t.voltage_window.1) {
            return Err(Error::config("calibration.step_window", "lower bound must be < upper"));
        }
        if !(t.disturbance_span >= 1.0) {
            return Err(Error::config("calibration.disturbance_span", "must be >= 1"));
        }
        if !(t.edot_margin >= 1.0) {
            return Err(Error::config("calibration.edot_margin", "must be >= 1"));
        }
        Ok(())
    }

    pub fn pi_gains(&self) -> Result<PiGains> {
        self.gains.resolve("gains")
    }

    /// The loop the case's primary agent runs on.
    pub fn loop_spec(&self) -> Result<LoopSpec> {
        let gains = self.pi_gains()?;
        Ok(match (self.case, &self.nested) {
            (Case::Case5, Some(n)) => LoopSpec::Nested(NestedLoopConfig {
                outer_gains: n.outer_gains.resolve("nested.outer_gains")?,
                outer_tau: n.outer_tau,
                outer_gain: n.outer_gain,
                inner: self.plant,
                inner_gains: gains,
                outer_ref_limit: n.outer_ref_limit,
            }),
            _ => LoopSpec::Single {
                plant: self.plant,
                gains,
            },
        })
    }

    /// Per-agent loops for the multi-agent case.
    pub fn agent_loops(&self) -> Result<Vec<(PlantConfig, PiGains)>> {
        let m = self
            .multi
            .as_ref()
            .ok_or_else(|| Error::config("multi", "missing [multi] section"))?;
        let mut loops = vec![(self.plant, self.pi_gains()?)];
        for (i, g) in m.others.iter().enumerate() {
            loops.push((self.plant, g.resolve(&format!("multi.others[{i}]"))?));
        }
        Ok(loops)
    }

    /// Binning ranges for single-agent cases.
    pub fn require_ranges(&self) -> Result<ParadigmRanges> {
        self.ranges
            .ok_or_else(|| Error::config("ranges", "missing; run `calibrate` first"))
    }

    pub fn require_agent_ranges(&self) -> Result<Vec<ParadigmRanges>> {
        let m = self
            .multi
            .as_ref()
            .ok_or_else(|| Error::config("multi", "missing [multi] section"))?;
        if m.ranges.len() != m.others.len() + 1 {
            return Err(Error::config("multi.ranges", "missing; run `calibrate` first"));
        }
        Ok(m.ranges.clone())
    }

    /// Training settings with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    /// Slowest time constant in the loop, for scenario settling margins.
    pub fn slowest_tau(&self) -> f64 {
        match &self.nested {
            Some(n) if self.case == Case::Case5 => n.outer_tau.max(self.plant.tau),
            _ => self.plant.tau,
        }
    }
}

fn validate_ranges(r: &ParadigmRanges, key: &str) -> Result<()> {
    let named: [(&str, BinRanges); 3] = [
        ("increase", r.increase),
        ("decrease", r.decrease),
        ("disturbance", r.disturbance),
    ];
    for (name, b) in named {
        b.validate(&format!("{key}.{name}"))?;
    }
    Ok(())
}
