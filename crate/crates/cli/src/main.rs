//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when an input cannot be read or parsed,
//! 2 when verification finds a violation.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use manet_ckpt::metrics::{compare, summarize_metrics};
use manet_ckpt::netsim::{
    fig4, load_graph, load_scenario, run, run_all_process_baseline, ScenarioConfig, Trace,
};
use manet_ckpt::topology::{classify_gateways, elect_clusterheads};
use manet_ckpt::verify::{verify_trace, VerifyReport};

#[derive(Parser)]
#[command(
    name = "manet-ckpt",
    version,
    about = "Checkpointing protocol simulator and trace checker"
)]
struct Cli {
    /// Print records only.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file, or the built-in `fig4` scenario.
    Run {
        scenario: String,
        /// Check the trace with every oracle; exit 2 on a violation.
        #[arg(long)]
        verify: bool,
        /// Write the trace here instead of standard output.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a trace file.
    Verify { trace: PathBuf },
    /// Count checkpoints and messages in a trace.
    Metrics {
        trace: PathBuf,
        /// Second trace to print side by side.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Elect clusterheads for a graph document.
    Cluster {
        graph: PathBuf,
        #[arg(long)]
        require_connected: bool,
    },
    /// Simulate with every initiation checkpointing the whole cluster.
    Baseline {
        scenario: String,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
}

/// Failure that maps to an exit status other than 1.
#[derive(Debug)]
struct Violations;

impl std::fmt::Display for Violations {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("verification failed")
    }
}

impl std::error::Error for Violations {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Violations>() => {
            if !cli.quiet {
                eprintln!("{e}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn scenario(arg: &str) -> Result<ScenarioConfig> {
    if arg == "fig4" {
        return Ok(fig4::scenario());
    }
    let text = read(Path::new(arg))?;
    load_scenario(&text).with_context(|| format!("{arg}: invalid scenario"))
}

fn load_trace(path: &Path) -> Result<Trace> {
    let text = read(path)?;
    Trace::from_jsonl(&text).with_context(|| format!("{}: invalid trace", path.display()))
}

/// Writes the trace to `out`, or to standard output.
fn emit_trace(trace: &Trace, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            fs::write(p, trace.to_jsonl()).with_context(|| format!("cannot write {}", p.display()))
        }
        None => {
            io::stdout().lock().write_all(trace.to_jsonl().as_bytes())?;
            Ok(())
        }
    }
}

fn report_lines(report: &VerifyReport) -> Vec<String> {
    let mut lines = Vec::new();
    for r in &report.iterations {
        let ids = |s: &std::collections::BTreeSet<manet_ckpt::topology::NodeId>| {
            s.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        lines.push(format!(
            "iteration {} committed={{{}}} oracle={{{}}} {}",
            r.iteration,
            ids(&r.committed_set),
            ids(&r.oracle_set),
            if r.is_clean() { "ok" } else { "violation" }
        ));
    }
    for v in report.violations() {
        lines.push(format!("violation {v}"));
    }
    lines
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run {
            scenario: arg,
            verify,
            trace_out,
            seed,
        } => {
            let mut config = scenario(arg)?;
            if let Some(s) = seed {
                config.seed = *s;
            }
            let trace = run(&config);
            emit_trace(&trace, trace_out.as_deref())?;
            if *verify {
                let report = verify_trace(&trace);
                // Keep standard output a clean trace when the trace goes there.
                for line in report_lines(&report) {
                    if trace_out.is_some() {
                        println!("{line}");
                    } else {
                        eprintln!("{line}");
                    }
                }
                if !report.is_clean() {
                    return Err(Violations.into());
                }
            }
            Ok(())
        }
        Command::Verify { trace } => {
            let trace = load_trace(trace)?;
            if !trace.is_complete() && !cli.quiet {
                eprintln!("warning: trace has no final records");
            }
            let report = verify_trace(&trace);
            for line in report_lines(&report) {
                println!("{line}");
            }
            if report.is_clean() {
                Ok(())
            } else {
                Err(Violations.into())
            }
        }
        Command::Metrics {
            trace,
            compare: other,
        } => {
            let left = summarize_metrics(&load_trace(trace)?)
                .with_context(|| format!("{}", trace.display()))?;
            match other {
                None => {
                    for (k, v) in left.fields() {
                        println!("{k} {v}");
                    }
                }
                Some(p) => {
                    let right = summarize_metrics(&load_trace(p)?)
                        .with_context(|| format!("{}", p.display()))?;
                    for (k, a, b) in compare(&left, &right) {
                        println!("{k} {a} {b}");
                    }
                }
            }
            Ok(())
        }
        Command::Cluster {
            graph,
            require_connected,
        } => {
            let g = load_graph(&read(graph)?)
                .with_context(|| format!("{}: invalid graph", graph.display()))?;
            if *require_connected && !g.is_connected() {
                bail!("{}: graph is not connected", graph.display());
            }
            let a = classify_gateways(&g, &elect_clusterheads(&g));
            for x in g.nodes() {
                println!(
                    "{} {} {} {}",
                    x,
                    a.role[&x],
                    a.cluster_of[&x],
                    g.weight(x).expect("node in graph")
                );
            }
            Ok(())
        }
        Command::Baseline {
            scenario: arg,
            trace_out,
        } => {
            let config = scenario(arg)?;
            let trace = run_all_process_baseline(&config);
            emit_trace(&trace, trace_out.as_deref())?;
            if !cli.quiet {
                let ours = summarize_metrics(&run(&config))?;
                let base = summarize_metrics(&trace)?;
                eprintln!(
                    "permanents per iteration: protocol {:.2}, all-process {:.2}",
                    ours.permanents_per_iteration(),
                    base.permanents_per_iteration()
                );
            }
            Ok(())
        }
    }
}
