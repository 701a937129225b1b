//! Episode traces and transient-response metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::Paradigm;

/// Fixed CSV header for exported traces.
pub const TRACE_CSV_HEADER: &str = "t,x_sp,x_sp_mod,x,e,m,paradigm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub x_sp: f64,
    pub x_sp_mod: f64,
    pub x: f64,
    /// Error against the nominal set point, `x_sp - x`.
    pub e: f64,
    pub m: f64,
    pub paradigm: Paradigm,
}

/// Samples of one run at communication-step spacing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    samples: Vec<TraceSample>,
}

impl EpisodeTrace {
    pub fn new(samples: Vec<TraceSample>) -> Self {
        EpisodeTrace { samples }
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `t0 <= t < t1`.
    pub fn window(&self, t0: f64, t1: f64) -> EpisodeTrace {
        let eps = 1e-9;
        EpisodeTrace::new(
            self.samples
                .iter()
                .filter(|s| s.t >= t0 - eps && s.t < t1 - eps)
                .copied()
                .collect(),
        )
    }

    pub fn from_time(&self, t0: f64) -> EpisodeTrace {
        self.window(t0, f64::INFINITY)
    }

    pub fn concat(&self, other: &EpisodeTrace) -> EpisodeTrace {
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        EpisodeTrace::new(samples)
    }

    pub fn shifted(&self, dt: f64) -> EpisodeTrace {
        EpisodeTrace::new(
            self.samples
                .iter()
                .map(|s| TraceSample { t: s.t + dt, ..*s })
                .collect(),
        )
    }

    pub fn max_x(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.x).reduce(f64::max)
    }

    pub fn min_x(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.x).reduce(f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.samples.len() + 1));
        out.push_str(TRACE_CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:.7},{:.9},{:.9},{:.9},{:.9},{:.9},{}",
                s.t, s.x_sp, s.x_sp_mod, s.x, s.e, s.m, s.paradigm
            );
        }
        out
    }
}

/// A set-point (or reference-level) transition the metrics are judged against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub from: f64,
    pub to: f64,
    /// Instant of the step; metrics look at samples from here on.
    pub at: f64,
}

/// Peak overshoot in percent of the step height.
pub fn overshoot_pct(trace: &EpisodeTrace, step: Step) -> Result<f64> {
    if !(step.to > step.from) {
        return Err(Error::DegenerateStep(format!(
            "overshoot needs to > from, got {} -> {}",
            step.from, step.to
        )));
    }
    let peak = trace.from_time(step.at).max_x().unwrap_or(step.to);
    Ok(100.0 * (peak - step.to).max(0.0) / (step.to - step.from))
}

/// Peak undershoot in percent of the new set point's magnitude.
pub fn undershoot_pct(trace: &EpisodeTrace, step: Step) -> Result<f64> {
    if step.to == 0.0 {
        return Err(Error::DegenerateStep("undershoot base is zero".into()));
    }
    if !(step.from > step.to) {
        return Err(Error::DegenerateStep(format!(
            "undershoot needs from > to, got {} -> {}",
            step.from, step.to
        )));
    }
    let trough = trace.from_time(step.at).min_x().unwrap_or(step.to);
    Ok(100.0 * (step.to - trough).max(0.0) / step.to.abs())
}

/// L2 norm of the nominal-set-point error over the samples.
pub fn cumulative_error(trace: &EpisodeTrace) -> f64 {
    trace.samples.iter().map(|s| s.e * s.e).sum::<f64>().sqrt()
}

/// First sample time, no earlier than `after`, from which `|e|` stays within
/// `band_pct` percent of the set-point basis (`max(|x_sp|, basis_floor)`) to
/// the end of the trace. `None` when the band is never held to the end.
pub fn settling_time(
    trace: &EpisodeTrace,
    band_pct: f64,
    after: f64,
    basis_floor: f64,
) -> Result<Option<f64>> {
    if !(band_pct > 0.0) {
        return Err(Error::config("band_pct", "must be > 0"));
    }
    let tail: Vec<&TraceSample> = trace.samples.iter().filter(|s| s.t >= after - 1e-9).collect();
    let inside =
        |s: &TraceSample| s.e.abs() <= band_pct / 100.0 * s.x_sp.abs().max(basis_floor);
    let mut first_inside: Option<f64> = None;
    for s in tail.iter().rev() {
        if inside(s) {
            first_inside = Some(s.t);
        } else {
            break;
        }
    }
    Ok(first_inside)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientMetrics {
    pub peak_overshoot_pct: f64,
    pub peak_undershoot_pct: f64,
    pub cumulative_error: f64,
    pub settling_time: Option<f64>,
}

/// Settling band used in reports, percent of the set point.
pub const REPORT_SETTLING_BAND_PCT: f64 = 2.0;

impl TransientMetrics {
    /// Metrics over the window starting at `step.at`. Overshoot is reported
    /// for upward steps, undershoot for downward ones; the other is zero.
    pub fn for_step(trace: &EpisodeTrace, step: Step) -> Result<Self> {
        let w = trace.from_time(step.at);
        let (over, under) = if step.to > step.from {
            (overshoot_pct(&w, step)?, 0.0)
        } else if step.to < step.from {
            (0.0, undershoot_pct(&w, step)?)
        } else {
            return Err(Error::DegenerateStep("from == to".into()));
        };
        Ok(TransientMetrics {
            peak_overshoot_pct: over,
            peak_undershoot_pct: under,
            cumulative_error: cumulative_error(&w),
            settling_time: settling_time(&w, REPORT_SETTLING_BAND_PCT, step.at, 0.1)?,
        })
    }
}
