use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swarmshape::metrics::{all_series, metrics_csv, summarize, trace_metrics_csv};
use swarmshape::world::trace::{parse_csv, RunMeta};
use swarmshape::{build_shape_table, run_with, RunOptions, Scenario, ShapeMatrix, SimError};

#[derive(Parser)]
#[command(name = "swarmshape", version, about = "Run and inspect swarm formation scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.csv, trace.meta.json, metrics.csv and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Use all cores for sensing and control; output is unchanged.
        #[arg(long)]
        parallel: bool,
    },
    /// Check a scenario and its shape.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print the shape table as CSV.
    DumpTable {
        #[arg(long)]
        shape: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
    },
    /// Recompute metrics from a trace written by `run`.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        /// Run facts; defaults to the trace's `.meta.json` sibling.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, SimError> {
    fs::read_to_string(path).map_err(|e| SimError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), SimError> {
    fs::write(path, text).map_err(|e| SimError::io(path, e))
}

fn meta_path(trace: &Path) -> PathBuf {
    trace.with_extension("meta.json")
}

fn execute(cmd: Command) -> Result<(), SimError> {
    match cmd {
        Command::Run { scenario, out, seed, max_ticks, parallel } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(m) = max_ticks {
                s.max_ticks = m;
            }
            let trace = run_with(&s, RunOptions { parallel })?;
            fs::create_dir_all(&out).map_err(|e| SimError::io(&out, e))?;
            let trace_file = out.join("trace.csv");
            write(&trace_file, &trace.to_csv())?;
            write(&meta_path(&trace_file), &serde_json::to_string_pretty(&trace.meta)?)?;
            write(&out.join("metrics.csv"), &trace_metrics_csv(&trace))?;
            write(&out.join("summary.json"), &serde_json::to_string_pretty(&summarize(&trace, &s))?)?;
            Ok(())
        }
        Command::Validate { scenario } => {
            let s = Scenario::load(&scenario)?;
            let table = s.validate()?;
            println!("ok: {} bots", table.len());
            Ok(())
        }
        Command::DumpTable { shape, spacing } => {
            let m: ShapeMatrix = read(&shape)?.parse()?;
            print!("{}", build_shape_table(&m, spacing)?.to_csv());
            Ok(())
        }
        Command::Metrics { trace, meta, out } => {
            let rows = parse_csv(&read(&trace)?)?;
            let meta: RunMeta = serde_json::from_str(&read(&meta.unwrap_or_else(|| meta_path(&trace)))?)?;
            let csv = metrics_csv(&all_series(&rows, &meta));
            match out {
                Some(p) => write(&p, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
