use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use obusim_core::scenario::{self, ReportKind, ReportOptions, ScenarioConfig, TickRange, TraceSource};
use obusim_core::trace::{IngestOptions, Tick};

#[derive(Parser)]
#[command(name = "obusim", version, about = "On-board-unit simulator for connected vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace and write metrics.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// FCD XML or CSV; overrides the config's trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Half-open range `A:B`.
        #[arg(long)]
        ticks: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print an aggregate of a finished run as CSV.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// bandwidth | ttv | cpr | timing
        #[arg(long)]
        kind: String,
        /// Tick for ttv and cpr (default: last).
        #[arg(long)]
        tick: Option<Tick>,
        /// CPR cell size in meters.
        #[arg(long, default_value_t = 100.0)]
        cell: f64,
    },
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, trace, out, seed, ticks, workers } => {
            let mut cfg = match &config {
                Some(p) => ScenarioConfig::load(p)?,
                None => ScenarioConfig::default(),
            };
            if let Some(path) = trace {
                let options = cfg.trace.as_ref().map(|t| t.options).unwrap_or(IngestOptions::default());
                cfg.trace = Some(TraceSource { path, format: None, options });
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = ticks {
                cfg.ticks = t.parse::<TickRange>()?;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let Some(src) = cfg.trace.clone() else { bail!("no trace given (use --trace or [trace] in the config)") };
            let Some(out) = out.or_else(|| cfg.output_dir.clone()) else {
                bail!("no output directory given (use --out)")
            };
            let trace = scenario::load_trace(&src).with_context(|| format!("loading {}", src.path.display()))?;
            let summary = scenario::run(&cfg, &trace, &out)?;
            eprintln!(
                "ran {} ticks, {} vehicles; metrics in {}",
                summary.ticks,
                summary.vehicles_seen,
                summary.metrics.display()
            );
        }
        Command::Report { run, kind, tick, cell } => {
            let kind: ReportKind = kind.parse()?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            scenario::report(&run, kind, ReportOptions { tick, cell }, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}
