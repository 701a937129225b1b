//! Set-point modulation rules.
//!
//! The adaptive rule scales the nominal set point by `(1 - m)` while tracking
//! an increase, by `(1 + m)` while tracking a decrease, and by `(1 + m)` with a
//! signed `m` while rejecting a disturbance. The fixed-scaling baseline
//! ([`SpaaceController`]) compares a linear prediction of the tracked variable
//! against a band and applies a constant factor.
//!
//! Sign convention: `delta = x_sp_prev - x_sp`, so a set-point *increase*
//! yields a *negative* delta.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Supplementary;

const RANGE_EPS: f64 = 1e-12;

/// Consecutive in-deadband samples required before a latched paradigm releases.
pub const SETTLE_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    IncreaseTracking,
    DecreaseTracking,
    DisturbanceRejection,
    Idle,
}

impl Paradigm {
    /// The three paradigms that carry a learned policy.
    pub const ACTIVE: [Paradigm; 3] = [
        Paradigm::IncreaseTracking,
        Paradigm::DecreaseTracking,
        Paradigm::DisturbanceRejection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::IncreaseTracking => "increase-tracking",
            Paradigm::DecreaseTracking => "decrease-tracking",
            Paradigm::DisturbanceRejection => "disturbance-rejection",
            Paradigm::Idle => "idle",
        }
    }

    /// Admissible `m` interval for this paradigm.
    pub fn m_range(self) -> (f64, f64) {
        match self {
            Paradigm::IncreaseTracking => (0.0, 0.95),
            Paradigm::DecreaseTracking => (0.0, 1.75),
            Paradigm::DisturbanceRejection => (-0.8, 0.8),
            Paradigm::Idle => (0.0, 0.0),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Paradigm::IncreaseTracking => 0,
            Paradigm::DecreaseTracking => 1,
            Paradigm::DisturbanceRejection => 2,
            Paradigm::Idle => 3,
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "increase-tracking" => Ok(Paradigm::IncreaseTracking),
            "decrease-tracking" => Ok(Paradigm::DecreaseTracking),
            "disturbance-rejection" => Ok(Paradigm::DisturbanceRejection),
            "idle" => Ok(Paradigm::Idle),
            other => Err(format!("unknown paradigm `{other}`")),
        }
    }
}

/// Nominal set point and its change since the previous communication step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetpointSignal {
    pub x_sp: f64,
    pub x_sp_prev: f64,
    /// `x_sp_prev - x_sp`; negative for an increase command.
    pub delta: f64,
}

impl SetpointSignal {
    pub fn new(x_sp_prev: f64, x_sp: f64) -> Self {
        SetpointSignal {
            x_sp,
            x_sp_prev,
            delta: x_sp_prev - x_sp,
        }
    }

    pub fn steady(x_sp: f64) -> Self {
        SetpointSignal::new(x_sp, x_sp)
    }

    /// Shift in a new nominal value and recompute `delta`.
    pub fn update(&mut self, x_sp: f64) {
        *self = SetpointSignal::new(self.x_sp, x_sp);
    }
}

/// Error deadband standing in for `|e| > 0`: 1% of the set point, floored at 0.1 pu.
pub fn deadband(x_sp: f64) -> f64 {
    0.01 * x_sp.abs().max(0.1)
}

/// Secondary logic: pick the active paradigm for this communication step.
pub fn detect_paradigm(sig: SetpointSignal, e: f64, deadband: f64, current: Paradigm) -> Paradigm {
    if current != Paradigm::Idle && e.abs() > deadband {
        return current;
    }
    if sig.delta < 0.0 {
        Paradigm::IncreaseTracking
    } else if sig.delta > 0.0 {
        Paradigm::DecreaseTracking
    } else if e.abs() > deadband {
        Paradigm::DisturbanceRejection
    } else {
        Paradigm::Idle
    }
}

/// Modulated set point for scaling factor `m` under `paradigm`.
pub fn apply_modulation(m: f64, x_sp: f64, paradigm: Paradigm) -> Result<f64> {
    let (lo, hi) = paradigm.m_range();
    if !(m >= lo - RANGE_EPS && m <= hi + RANGE_EPS) {
        return Err(Error::ActionOutOfRange {
            m,
            lo,
            hi,
            paradigm: paradigm.name(),
        });
    }
    Ok(match paradigm {
        Paradigm::IncreaseTracking => (1.0 - m) * x_sp,
        Paradigm::DecreaseTracking | Paradigm::DisturbanceRejection => (1.0 + m) * x_sp,
        Paradigm::Idle => x_sp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationDecision {
    pub m: f64,
    pub x_sp_mod: f64,
    pub paradigm: Paradigm,
}

impl ModulationDecision {
    pub fn idle(x_sp: f64) -> Self {
        ModulationDecision {
            m: 0.0,
            x_sp_mod: x_sp,
            paradigm: Paradigm::Idle,
        }
    }
}

/// Latched paradigm selection carried across communication steps.
///
/// A new set-point command always re-selects the paradigm. Otherwise an
/// active paradigm stays latched until the error has been inside the deadband
/// for [`SETTLE_SAMPLES`] consecutive samples.
#[derive(Debug, Clone)]
pub struct SecondaryLogic {
    sig: Option<SetpointSignal>,
    paradigm: Paradigm,
    settled_run: usize,
}

impl Default for SecondaryLogic {
    fn default() -> Self {
        SecondaryLogic::new()
    }
}

impl SecondaryLogic {
    pub fn new() -> Self {
        SecondaryLogic {
            sig: None,
            paradigm: Paradigm::Idle,
            settled_run: 0,
        }
    }

    pub fn paradigm(&self) -> Paradigm {
        self.paradigm
    }

    pub fn signal(&self) -> Option<SetpointSignal> {
        self.sig
    }

    /// True on the step where a new set-point command arrived.
    pub fn command_changed(&self) -> bool {
        self.sig.is_some_and(|s| s.delta != 0.0)
    }

    pub fn update(&mut self, x_sp: f64, e: f64) -> Paradigm {
        let sig = match self.sig.as_mut() {
            Some(s) => {
                s.update(x_sp);
                *s
            }
            None => {
                let s = SetpointSignal::steady(x_sp);
                self.sig = Some(s);
                s
            }
        };
        let db = deadband(x_sp);
        if sig.delta != 0.0 {
            self.paradigm = detect_paradigm(sig, e, db, Paradigm::Idle);
            self.settled_run = 0;
        } else if self.paradigm != Paradigm::Idle {
            if e.abs() <= db {
                self.settled_run += 1;
            } else {
                self.settled_run = 0;
            }
            if self.settled_run >= SETTLE_SAMPLES {
                self.paradigm = Paradigm::Idle;
                self.settled_run = 0;
            }
        } else {
            self.paradigm = detect_paradigm(sig, e, db, Paradigm::Idle);
        }
        self.paradigm
    }
}

/// Two-point linear extrapolation `t_pred` ahead.
pub fn linear_predict(x_now: f64, x_prev: f64, sample_dt: f64, t_pred: f64) -> f64 {
    x_now + (x_now - x_prev) * (t_pred / sample_dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaaceConfig {
    pub m_fixed: f64,
    /// Prediction horizon (s).
    pub t_pred: f64,
    pub x_min: f64,
    pub x_max: f64,
    /// Controller cadence (s); must be a multiple of the plant's sim step.
    pub comm_step: f64,
}

impl SpaaceConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        if !(self.m_fixed > 0.0 && self.m_fixed < 1.0) {
            return Err(Error::config(format!("{section}.m_fixed"), "must lie in (0, 1)"));
        }
        if !(self.t_pred > 0.0) {
            return Err(Error::config(format!("{section}.t_pred"), "must be > 0"));
        }
        if !(self.x_min < self.x_max) {
            return Err(Error::config(format!("{section}.x_min"), "must be < x_max"));
        }
        if !(self.comm_step > 0.0) {
            return Err(Error::config(format!("{section}.comm_step"), "must be > 0"));
        }
        Ok(())
    }
}

/// Fixed-factor modulation from a predicted value.
pub fn spaace_decide(cfg: &SpaaceConfig, x_sp: f64, x_pred: f64) -> f64 {
    if x_pred < cfg.x_min {
        (1.0 + cfg.m_fixed) * x_sp
    } else if x_pred > cfg.x_max {
        (1.0 - cfg.m_fixed) * x_sp
    } else {
        x_sp
    }
}

/// Fixed-scaling baseline driven by a two-point linear predictor.
#[derive(Debug, Clone)]
pub struct SpaaceController {
    cfg: SpaaceConfig,
    sample_dt: f64,
    x_prev: Option<f64>,
}

impl SpaaceController {
    pub fn new(cfg: SpaaceConfig, sample_dt: f64) -> Self {
        SpaaceController {
            cfg,
            sample_dt,
            x_prev: None,
        }
    }
}

impl Supplementary for SpaaceController {
    fn decide(&mut self, _t: f64, x_sp: f64, x: f64) -> ModulationDecision {
        let prev = self.x_prev.replace(x).unwrap_or(x);
        let x_pred = linear_predict(x, prev, self.sample_dt, self.cfg.t_pred);
        let x_sp_mod = spaace_decide(&self.cfg, x_sp, x_pred);
        // record which branch fired in the adaptive rule's terms
        let (m, paradigm) = if x_pred < self.cfg.x_min && x_sp != 0.0 {
            (self.cfg.m_fixed, Paradigm::DecreaseTracking)
        } else if x_pred > self.cfg.x_max && x_sp != 0.0 {
            (self.cfg.m_fixed, Paradigm::IncreaseTracking)
        } else {
            (0.0, Paradigm::Idle)
        };
        ModulationDecision {
            m,
            x_sp_mod,
            paradigm,
        }
    }
}
