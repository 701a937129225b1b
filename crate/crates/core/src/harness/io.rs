//! Output directories: policy archives, reports, traces and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::learner::{TerminalKind, TrainingReport};
use crate::modulation::Paradigm;

use super::archive::PolicyArchive;
use super::config::{Case, ExperimentConfig};
use super::run::{comparison_rows, AgentPolicies, ComparisonRow, EvalOutcome, TrainOutcome};

/// Manifest file written by `command` (`train`, `eval`, `compare`).
pub fn manifest_name(command: &str) -> String {
    format!("manifest-{command}.json")
}

pub fn archive_name(case: Case, agent: usize, paradigm: Paradigm) -> String {
    if case.is_multi_agent() {
        format!("policy-agent{agent}-{paradigm}.txt")
    } else {
        format!("policy-{paradigm}.txt")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub command: String,
    pub case: Case,
    pub config_sha256: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

/// Collects written files so a failed run can remove what it left behind.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        self.written.push(name.to_string());
        std::fs::write(self.dir.join(name), contents)?;
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::config(name, e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    /// Write the manifest last, listing everything before it.
    pub fn finish(mut self, cfg: &ExperimentConfig, tag: &str, command: &str) -> Result<Vec<String>> {
        let m = Manifest {
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            case: cfg.case,
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            outputs: self.written.clone(),
        };
        self.write_json(&manifest_name(tag), &m)?;
        Ok(std::mem::take(&mut self.written))
    }

    pub fn discard(self) {
        for name in &self.written {
            let _ = std::fs::remove_file(self.dir.join(name));
        }
    }
}

/// Run `body` against a fresh output set, removing partial files on error.
pub fn with_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    tag: &str,
    command: &str,
    body: impl FnOnce(&mut OutputDir) -> Result<()>,
) -> Result<Vec<String>> {
    let mut out = OutputDir::create(dir)?;
    match body(&mut out) {
        Ok(()) => out.finish(cfg, tag, command),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct ReportSummary<'a> {
    agent: usize,
    paradigm: Paradigm,
    episodes: usize,
    converged_after: Option<usize>,
    mean_return_last100: f64,
    settled: usize,
    band_violations: usize,
    time_ups: usize,
    diverged: usize,
    records: &'a [crate::learner::EpisodeRecord],
}

fn summary(agent: usize, r: &TrainingReport) -> ReportSummary<'_> {
    ReportSummary {
        agent,
        paradigm: r.paradigm,
        episodes: r.episodes.len(),
        converged_after: r.converged_after,
        mean_return_last100: r.mean_return(100),
        settled: r.count(TerminalKind::SettledOk),
        band_violations: r.count(TerminalKind::BandViolation),
        time_ups: r.count(TerminalKind::TimeUp),
        diverged: r.count(TerminalKind::Diverged),
        records: &r.episodes,
    }
}

pub fn write_training(out: &mut OutputDir, case: Case, t: &TrainOutcome) -> Result<()> {
    for (agent, a) in &t.archives {
        let name = archive_name(case, *agent, a.paradigm());
        out.write(&name, &a.to_text())?;
    }
    let summaries: Vec<ReportSummary> = t.reports.iter().map(|(i, r)| summary(*i, r)).collect();
    out.write_json("train-report.json", &summaries)?;

    let mut csv = String::from("agent,paradigm,episode,epsilon,return,kind,steps,explored,matrix_changes\n");
    let mut txt = String::new();
    for s in &summaries {
        for r in s.records {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                s.agent,
                s.paradigm,
                r.episode,
                r.epsilon,
                r.ret,
                r.kind.name(),
                r.steps,
                r.explored,
                r.matrix_changes
            );
        }
        let conv = s
            .converged_after
            .map_or("not converged".to_string(), |n| format!("converged after {n}"));
        let _ = writeln!(
            txt,
            "agent {} {}: {} episodes, {conv}, mean return (last 100) {:.3}, \
             settled {}, band violations {}, time-ups {}, diverged {}",
            s.agent,
            s.paradigm,
            s.episodes,
            s.mean_return_last100,
            s.settled,
            s.band_violations,
            s.time_ups,
            s.diverged
        );
    }
    out.write("train-episodes.csv", &csv)?;
    out.write("train-report.txt", &txt)
}

/// Load every archive a case expects from `dir`. Missing files are skipped;
/// the evaluator reports the missing paradigm.
pub fn load_policies(dir: &Path, cfg: &ExperimentConfig) -> Result<AgentPolicies> {
    let agents = if cfg.case.is_multi_agent() {
        cfg.agent_loops()?.len()
    } else {
        1
    };
    let mut all = Vec::with_capacity(agents);
    for agent in 0..agents {
        let mut v = Vec::new();
        for &p in cfg.case.paradigms() {
            let path = dir.join(archive_name(cfg.case, agent, p));
            if !path.exists() {
                continue;
            }
            let a = PolicyArchive::load(&path)?;
            if a.paradigm() != p {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: 2,
                    reason: format!("expected paradigm {p}, found {}", a.paradigm()),
                });
            }
            v.push(a);
        }
        all.push(v);
    }
    Ok(all)
}

fn trace_name(o: &EvalOutcome, agent: usize, multi: bool) -> String {
    if multi {
        format!("trace-{}-agent{agent}.csv", o.controller.name())
    } else {
        format!("trace-{}.csv", o.controller.name())
    }
}

pub fn write_eval(out: &mut OutputDir, o: &EvalOutcome) -> Result<()> {
    let multi = o.traces.len() > 1;
    for (i, t) in o.traces.iter().enumerate() {
        out.write(&trace_name(o, i, multi), &t.to_csv())?;
    }
    out.write_json(&format!("metrics-{}.json", o.controller.name()), &o.metrics)
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.prec$}"))
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>5} {:>12} {:>13} {:>12} {:>12}",
        "ctrl", "agent", "overshoot%", "undershoot%", "S_e", "settle_s"
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>12.2} {:>13} {:>12.4} {:>12}",
            r.controller.name(),
            m.agent,
            m.peak_overshoot_pct,
            opt(m.peak_undershoot_pct, 2),
            m.cumulative_error,
            opt(m.settling_time, 5)
        );
    }
    s
}

pub fn write_comparison(out: &mut OutputDir, outcomes: &[EvalOutcome]) -> Result<()> {
    for o in outcomes {
        write_eval(out, o)?;
    }
    let rows = comparison_rows(outcomes);
    let mut csv = String::from("controller,agent,overshoot_pct,undershoot_pct,cumulative_error,settling_time\n");
    for r in &rows {
        let m = &r.metrics;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.controller.name(),
            m.agent,
            m.peak_overshoot_pct,
            m.peak_undershoot_pct.map_or(String::new(), |v| v.to_string()),
            m.cumulative_error,
            m.settling_time.map_or(String::new(), |v| v.to_string())
        );
    }
    out.write("comparison.csv", &csv)?;
    out.write_json("comparison.json", &rows)?;
    out.write("comparison.txt", &comparison_table(&rows))
}
