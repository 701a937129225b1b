//! Policy archives and decision-matrix grid files.
//!
//! Archives are line-oriented text: a versioned header followed by one record
//! per stored state-action pair. Floats are written with Rust's shortest
//! round-trip formatting, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::{DecisionMatrix, TrainingReport};
use crate::mdp::{ActionGrid, AgentModel, BinRanges, DiscreteState, PairStats, Successor, EDOT_BINS, E_BINS};
use crate::modulation::Paradigm;

pub const ARCHIVE_MAGIC: &str = "sprl-policy";
pub const ARCHIVE_VERSION: u32 = 1;
/// Grid-file marker for states with no observed action.
pub const UNVISITED: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveSummary {
    pub episodes: usize,
    pub converged_after: Option<usize>,
    pub mean_return_last100: f64,
}

impl ArchiveSummary {
    pub fn from_report(r: &TrainingReport) -> Self {
        ArchiveSummary {
            episodes: r.episodes.len(),
            converged_after: r.converged_after,
            mean_return_last100: r.mean_return(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyArchive {
    pub grid: ActionGrid,
    pub ranges: BinRanges,
    pub model: AgentModel,
    pub summary: Option<ArchiveSummary>,
}

fn fmt_succ(s: Successor) -> String {
    match s {
        Successor::State(d) => d.index().to_string(),
        Successor::Terminal => "T".into(),
    }
}

impl PolicyArchive {
    pub fn paradigm(&self) -> Paradigm {
        self.grid.paradigm
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{ARCHIVE_MAGIC} {ARCHIVE_VERSION}");
        let _ = writeln!(out, "paradigm {}", self.grid.paradigm);
        let _ = writeln!(out, "gamma {}", self.model.gamma());
        let values: Vec<String> = self.grid.values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "actions {}", values.join(" "));
        let _ = writeln!(out, "e_range {}", self.ranges.e_range);
        let _ = writeln!(out, "edot_range {}", self.ranges.edot_range);
        let _ = writeln!(out, "bins {E_BINS} {EDOT_BINS}");
        if let Some(s) = &self.summary {
            let conv = s.converged_after.map_or("none".to_string(), |c| c.to_string());
            let _ = writeln!(
                out,
                "summary episodes={} converged_after={} mean_return_last100={}",
                s.episodes, conv, s.mean_return_last100
            );
        }
        let records: Vec<(DiscreteState, usize)> = DiscreteState::all()
            .flat_map(|s| (0..self.model.n_actions()).map(move |a| (s, a)))
            .filter(|&(s, a)| self.model.visits(s, a) > 0 || self.model.q(s, a).to_bits() != 0)
            .collect();
        let _ = writeln!(out, "records {}", records.len());
        for (s, a) in records {
            let st = self.model.stats(s, a);
            let _ = write!(
                out,
                "{} {} {} {} {}",
                s.index(),
                a,
                self.model.q(s, a),
                st.visits,
                st.reward_sum
            );
            for &(succ, c) in &st.successors {
                let _ = write!(out, " {}:{}", fmt_succ(succ), c);
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Format {
            path: path.to_string(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };

        let (n, l) = next("header")?;
        let mut head = l.split_whitespace();
        if head.next() != Some(ARCHIVE_MAGIC) {
            return Err(err(n, "not a policy archive".into()));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(n, "missing format version".into()))?;
        if version != ARCHIVE_VERSION {
            return Err(err(
                n,
                format!("unsupported format version {version} (expected {ARCHIVE_VERSION})"),
            ));
        }

        fn field<'a>(
            l: (usize, &'a str),
            key: &str,
            err: &dyn Fn(usize, String) -> Error,
        ) -> Result<&'a str> {
            let (n, text) = l;
            text.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| err(n, format!("expected `{key}`")))
        }
        fn num<T: std::str::FromStr>(
            n: usize,
            v: &str,
            err: &dyn Fn(usize, String) -> Error,
        ) -> Result<T> {
            v.parse()
                .map_err(|_| err(n, format!("cannot parse `{v}` as a number")))
        }

        let l = next("paradigm")?;
        let paradigm: Paradigm = field(l, "paradigm", &err)?
            .parse()
            .map_err(|_| err(l.0, "unknown paradigm".into()))?;
        let l = next("gamma")?;
        let gamma: f64 = num(l.0, field(l, "gamma", &err)?, &err)?;
        let l = next("actions")?;
        let values = field(l, "actions", &err)?
            .split_whitespace()
            .map(|v| num::<f64>(l.0, v, &err))
            .collect::<Result<Vec<f64>>>()?;
        let l = next("e_range")?;
        let e_range: f64 = num(l.0, field(l, "e_range", &err)?, &err)?;
        let l = next("edot_range")?;
        let edot_range: f64 = num(l.0, field(l, "edot_range", &err)?, &err)?;
        let l = next("bins")?;
        if field(l, "bins", &err)? != format!("{E_BINS} {EDOT_BINS}") {
            return Err(err(l.0, format!("expected {E_BINS}x{EDOT_BINS} bins")));
        }

        let mut l = next("records")?;
        let mut summary = None;
        if let Ok(rest) = field(l, "summary", &err) {
            let mut s = ArchiveSummary {
                episodes: 0,
                converged_after: None,
                mean_return_last100: 0.0,
            };
            for kv in rest.split_whitespace() {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| err(l.0, format!("bad summary entry `{kv}`")))?;
                match k {
                    "episodes" => s.episodes = num(l.0, v, &err)?,
                    "converged_after" if v == "none" => s.converged_after = None,
                    "converged_after" => s.converged_after = Some(num(l.0, v, &err)?),
                    "mean_return_last100" => s.mean_return_last100 = num(l.0, v, &err)?,
                    _ => return Err(err(l.0, format!("unknown summary key `{k}`"))),
                }
            }
            summary = Some(s);
            l = next("records")?;
        }
        let count: usize = num(l.0, field(l, "records", &err)?, &err)?;

        let grid = ActionGrid { paradigm, values };
        let mut model =
            AgentModel::new(grid.len(), gamma).map_err(|e| err(2, e.to_string()))?;
        for _ in 0..count {
            let (n, text) = next("record")?;
            let mut parts = text.split_whitespace();
            let mut tok = |what: &str| {
                parts
                    .next()
                    .ok_or_else(|| err(n, format!("record is missing {what}")))
            };
            let s: usize = num(n, tok("state")?, &err)?;
            let a: usize = num(n, tok("action")?, &err)?;
            let q: f64 = num(n, tok("q")?, &err)?;
            let visits: u64 = num(n, tok("visits")?, &err)?;
            let reward_sum: f64 = num(n, tok("reward sum")?, &err)?;
            if s >= E_BINS * EDOT_BINS || a >= grid.len() {
                return Err(err(n, format!("state {s} or action {a} out of range")));
            }
            let mut successors = Vec::new();
            for item in parts {
                let (succ, c) = item
                    .split_once(':')
                    .ok_or_else(|| err(n, format!("bad successor `{item}`")))?;
                let succ = if succ == "T" {
                    Successor::Terminal
                } else {
                    let i: usize = num(n, succ, &err)?;
                    if i >= E_BINS * EDOT_BINS {
                        return Err(err(n, format!("successor {i} out of range")));
                    }
                    Successor::State(DiscreteState::from_index(i))
                };
                successors.push((succ, num::<u64>(n, c, &err)?));
            }
            let total: u64 = successors.iter().map(|(_, c)| c).sum();
            if total != visits {
                return Err(err(n, "successor counts do not sum to visits".into()));
            }
            let ds = DiscreteState::from_index(s);
            model.set_q(ds, a, q);
            model.set_stats(
                ds,
                a,
                PairStats {
                    visits,
                    reward_sum,
                    successors,
                },
            );
        }
        let (n, l) = next("end")?;
        if l.trim() != "end" {
            return Err(err(n, "expected `end`".into()));
        }
        if let Some((n, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(err(n, "trailing content after `end`".into()));
        }
        Ok(PolicyArchive {
            grid,
            ranges: BinRanges {
                e_range,
                edot_range,
            },
            model,
            summary,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// 25 rows of 100 comma-separated action indices, preceded by a legend.
pub fn export_grid(dm: &DecisionMatrix, grid: &ActionGrid) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# decision matrix: {}", dm.paradigm);
    let _ = writeln!(
        out,
        "# rows: e_bin 0..{}, columns: edot_bin 0..{}, {UNVISITED} = unvisited",
        E_BINS - 1,
        EDOT_BINS - 1
    );
    for (i, m) in grid.values.iter().enumerate() {
        let _ = writeln!(out, "# action {i}: m = {m}");
    }
    for row in dm.rows() {
        let cells: Vec<String> = row
            .iter()
            .map(|c| c.map_or(UNVISITED.to_string(), |a| a.to_string()))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn import_grid(text: &str, path: &str) -> Result<DecisionMatrix> {
    let err = |line: usize, reason: String| Error::Format {
        path: path.to_string(),
        line,
        reason,
    };
    let mut paradigm = None;
    let mut cells = Vec::with_capacity(E_BINS * EDOT_BINS);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if let Some(c) = line.strip_prefix('#') {
            if let Some(p) = c.trim().strip_prefix("decision matrix:") {
                paradigm = Some(
                    p.trim()
                        .parse::<Paradigm>()
                        .map_err(|_| err(n, "unknown paradigm".into()))?,
                );
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != EDOT_BINS {
            return Err(err(n, format!("expected {EDOT_BINS} columns, got {}", row.len())));
        }
        for v in row {
            let a: i32 = v
                .trim()
                .parse()
                .map_err(|_| err(n, format!("bad cell `{v}`")))?;
            cells.push(match a {
                UNVISITED => None,
                0..=255 => Some(a as u8),
                _ => return Err(err(n, format!("bad action index {a}"))),
            });
        }
        rows += 1;
    }
    if rows != E_BINS {
        return Err(err(0, format!("expected {E_BINS} rows, got {rows}")));
    }
    Ok(DecisionMatrix {
        paradigm: paradigm.ok_or_else(|| err(1, "missing paradigm header".into()))?,
        cells,
    })
}
