use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use distlist::runtime::sim::Verdict;
use distlist::runtime::Report;
use distlist_cli::{load_config, replay_trace, run, select, write_outputs, Replay, Suite, SCENARIOS};

#[derive(Parser)]
#[command(name = "distlist", version, about = "Deterministic simulator for the distributed list")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one configuration and check it.
    Run(RunArgs),
    /// Re-execute a trace and require a byte-identical result.
    ReplayTrace {
        path: PathBuf,
        /// Check the recorded client history without simulating.
        #[arg(long)]
        verify_only: bool,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
        verify: Vec<Suite>,
    },
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario name or path to a key=value config file.
    #[arg(short, long)]
    config: Option<String>,
    #[arg(long, value_parser = ["am", "tr"])]
    protocol: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Directives, e.g. `10:move:0:1;40:split:0:3`.
    #[arg(long)]
    script: Option<String>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    verify: Vec<Suite>,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

fn print_verdicts(v: &[(String, Verdict)]) -> bool {
    for (name, v) in v {
        println!("{} {name}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
    }
    v.iter().all(|(_, v)| v.ok)
}

fn summary(r: &Report) {
    println!(
        "protocol {:?} variant {:?} seed {} ticks {} messages {} trace lines {}",
        r.protocol, r.variant, r.seed, r.ticks, r.messages, r.trace_lines
    );
    for (name, o) in &r.ops {
        println!("  {name}: {} issued, {} completed, {} failed", o.count, o.completed, o.failed);
    }
    for m in &r.moves {
        println!(
            "  move sublist {} s{} -> s{}: attempts {} aborts {} cas {:?}",
            m.sublist, m.from, m.to, m.attempts, m.aborts, m.t_cas
        );
    }
    println!("  splits {} replicates {} delinked {}", r.splits.len(), r.replicates, r.delinked);
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let mut cfg = load_config(a.config.as_deref())?;
    let mut set = |k: &str, v: &str| cfg.set(k, v).map_err(|e| anyhow!(e));
    if let Some(p) = &a.protocol {
        set("protocol", p)?;
    }
    if let Some(s) = a.seed {
        set("seed", &s.to_string())?;
    }
    if let Some(s) = a.steps {
        set("steps", &s.to_string())?;
    }
    if let Some(s) = &a.script {
        set("script", s)?;
    }
    for kv in &a.sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        set(k, v)?;
    }
    let out = run(cfg)?;
    if let Some(p) = &a.trace_out {
        write_outputs(&out, p)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&out.report)?);
    } else {
        summary(&out.report);
    }
    let ok = print_verdicts(&select(&out.report.verdicts, &a.verify));
    for f in &out.report.faults {
        println!("FAULT {f}");
    }
    Ok(ok && out.report.faults.is_empty())
}

fn cmd_replay(path: PathBuf, verify_only: bool, suites: Vec<Suite>) -> Result<bool> {
    match replay_trace(&path, verify_only)? {
        Replay::Checked { verdicts } => Ok(print_verdicts(&select(&verdicts, &suites))),
        Replay::Rerun {
            identical,
            first_diff,
            report,
        } => {
            match first_diff {
                None => println!("trace reproduced ({} lines)", report.trace_lines),
                Some(l) => println!("trace differs from line {l}"),
            }
            let ok = print_verdicts(&select(&report.verdicts, &suites));
            Ok(identical && ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::ReplayTrace {
            path,
            verify_only,
            verify,
        } => cmd_replay(path, verify_only, verify),
        Cmd::Scenarios => {
            for (name, text) in SCENARIOS {
                let about = text.lines().next().unwrap_or("").trim_start_matches('#').trim();
                println!("{name:<18} {about}");
            }
            Ok(true)
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
