//! Command-line driver for the simulator: config loading, the scenario
//! bank, suite selection and trace files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use distlist::runtime::sim::Verdict;
use distlist::runtime::trace::{self, TraceError, TRACE_VERSION};
use distlist::runtime::{simulate, Report, SimConfig};
use distlist::verify::history::History;
use distlist::verify::oracle::SeqEntry;
use distlist::verify::suites::history_verdicts;
use serde::{Deserialize, Serialize};

/// Bundled scenarios, by name.
pub const SCENARIOS: &[(&str, &str)] = &[
    ("quiescent-move", include_str!("../scenarios/quiescent-move.conf")),
    ("hot-move", include_str!("../scenarios/hot-move.conf")),
    ("split-storm", include_str!("../scenarios/split-storm.conf")),
    ("reorder-adversary", include_str!("../scenarios/reorder-adversary.conf")),
    ("sorted-mixed", include_str!("../scenarios/sorted-mixed.conf")),
];

pub fn scenario(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Suite {
    Lin,
    Lookup,
    Replay,
    Counters,
    All,
}

impl Suite {
    /// Verdict names covered by the suite.
    fn covers(self, verdict: &str) -> bool {
        match self {
            Suite::All => true,
            Suite::Lin => matches!(verdict, "history_well_formed" | "linearizable"),
            Suite::Lookup => matches!(verdict, "history_well_formed" | "lookup_inclusion"),
            Suite::Replay => matches!(verdict, "moves" | "replicate_after_response"),
            Suite::Counters => verdict == "counter_identity",
        }
    }
}

/// Verdicts selected by `suites`, in name order.
pub fn select(verdicts: &BTreeMap<String, Verdict>, suites: &[Suite]) -> Vec<(String, Verdict)> {
    verdicts
        .iter()
        .filter(|(k, _)| suites.iter().any(|s| s.covers(k)))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Reads a config: a bundled scenario name or a path to a key=value file.
pub fn load_config(source: Option<&str>) -> Result<SimConfig> {
    let Some(src) = source else {
        return Ok(SimConfig::default());
    };
    let text = match scenario(src) {
        Some(t) => t.to_string(),
        None => fs::read_to_string(src).with_context(|| format!("reading config {src}"))?,
    };
    let mut cfg = SimConfig::default();
    cfg.apply_kv(&text).map_err(|e| anyhow!("{src}: {e}"))?;
    Ok(cfg)
}

/// Client-history file written next to a trace.
#[derive(Serialize, Deserialize)]
struct HistoryHeader {
    servers: u16,
    initial: Vec<SeqEntry>,
}

pub fn history_path(trace: &Path) -> PathBuf {
    let mut s = trace.as_os_str().to_owned();
    s.push(".history");
    PathBuf::from(s)
}

pub struct RunOutput {
    pub report: Report,
    pub trace: String,
    pub history: String,
}

pub fn run(cfg: SimConfig) -> Result<RunOutput> {
    cfg.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    let servers = cfg.servers;
    let w = simulate(cfg);
    let header = HistoryHeader {
        servers,
        initial: w.initial.clone(),
    };
    let mut history = serde_json::to_string(&header)? + "\n";
    history.push_str(&w.ctx.stats.borrow().history.to_lines());
    Ok(RunOutput {
        report: w.report(),
        trace: w.trace_text(),
        history,
    })
}

pub fn write_outputs(out: &RunOutput, trace_path: &Path) -> Result<()> {
    fs::write(trace_path, &out.trace).with_context(|| format!("writing {}", trace_path.display()))?;
    let hp = history_path(trace_path);
    fs::write(&hp, &out.history).with_context(|| format!("writing {}", hp.display()))?;
    Ok(())
}

/// Config embedded in a trace file, after version and digest checks.
pub fn trace_config(text: &str) -> Result<SimConfig> {
    let p = trace::parse(text).map_err(|e| match e {
        TraceError::Version => anyhow!("{e}, expected {TRACE_VERSION}"),
        e => anyhow!(e),
    })?;
    serde_json::from_str(&p.config_json).context("trace header config")
}

pub enum Replay {
    /// Re-simulated; `identical` tells whether the traces match byte for byte.
    Rerun { identical: bool, first_diff: Option<usize>, report: Report },
    /// History checks only.
    Checked { verdicts: BTreeMap<String, Verdict> },
}

pub fn replay_trace(path: &Path, verify_only: bool) -> Result<Replay> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = trace_config(&text)?;
    if verify_only {
        let hp = history_path(path);
        let htext = fs::read_to_string(&hp).with_context(|| format!("reading {}", hp.display()))?;
        let (head, rest) = htext.split_once('\n').unwrap_or((&htext, ""));
        let header: HistoryHeader = serde_json::from_str(head).context("history header")?;
        let h = History::from_lines(rest).map_err(|e| anyhow!(e))?;
        if header.servers != cfg.servers {
            bail!("history was recorded with {} servers, trace says {}", header.servers, cfg.servers);
        }
        return Ok(Replay::Checked {
            verdicts: history_verdicts(&header.initial, &h, header.servers),
        });
    }
    let out = run(cfg)?;
    let identical = out.trace == text;
    let first_diff = (!identical).then(|| {
        out.trace
            .lines()
            .zip(text.lines())
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| out.trace.lines().count().min(text.lines().count()))
            + 1
    });
    Ok(Replay::Rerun {
        identical,
        first_diff,
        report: out.report,
    })
}
