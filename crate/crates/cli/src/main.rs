use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use encircle_cli::batch::{run_batch, TraceOutput};
use encircle_cli::commands::write_trace_file;
use encircle_cli::serve::{serve, ServeOptions};
use encircle_cli::{load_config, parse_seeds, run_once, verify_scenario, verify_trace};
use encircle_core::{write_trace, TraceFormat};

/// Exit status when verification finds a hard failure.
const EXIT_VERIFY_FAILED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "encircle",
    version,
    about = "Two-agent range-only target encirclement simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, write its trace and print a JSON summary.
    Run(RunArgs),
    /// Run a scenario over many seeds and print an aggregate JSON report.
    Batch(BatchArgs),
    /// Check gates and error identities on a scenario run or a recorded trace.
    Verify(VerifyArgs),
    /// Run the closed loop live and stream it over WebSocket at /ws.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for TraceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TraceFormat::Csv,
            Format::Jsonl => TraceFormat::Jsonl,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML); the built-in reference scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Trace output path. Without it the trace goes to stdout and the
    /// summary to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Also write the summary JSON to this path.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Seeds: comma-separated values and ranges, e.g. `0..20` or `1,5,9..=12`.
    #[arg(long, default_value = "0..20")]
    seeds: String,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for per-seed traces (`seed-<n>.csv`); none written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Recorded trace to verify instead of running a scenario.
    #[arg(long, conflicts_with = "scenario")]
    trace: Option<PathBuf>,
    /// Override the scenario's seed.
    #[arg(long, conflicts_with = "trace")]
    seed: Option<u64>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "127.0.0.1:8765")]
    bind: SocketAddr,
    /// Simulation steps per second.
    #[arg(long, default_value_t = 20.0)]
    tick_hz: f64,
    /// Manual steering speed cap in meters per step.
    #[arg(long)]
    max_speed: Option<f64>,
}

fn print_json<T: serde::Serialize>(value: &T, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = load_config(args.scenario.scenario.as_deref(), args.seed)?;
    let (trace, summary) = run_once(&cfg)?;
    let format = TraceFormat::from(args.format);
    match &args.out {
        Some(path) => {
            write_trace_file(&trace, format, path)?;
            log::info!("wrote {} steps to {}", trace.len(), path.display());
            print_json(&summary, io::stdout().lock())?;
        }
        None => {
            let mut out = io::BufWriter::new(io::stdout().lock());
            write_trace(&trace, format, &mut out)?;
            out.flush()?;
            print_json(&summary, io::stderr().lock())?;
        }
    }
    if let Some(path) = &args.summary {
        let file =
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        print_json(&summary, file)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn batch(args: BatchArgs) -> Result<ExitCode> {
    let cfg = load_config(args.scenario.scenario.as_deref(), None)?;
    let seeds = parse_seeds(&args.seeds)?;
    let traces = args.out.map(|dir| TraceOutput {
        dir,
        format: args.format.into(),
    });
    let report = run_batch(&cfg, &seeds, args.jobs, traces.as_ref())?;
    print_json(&report, io::stdout().lock())?;
    if report.any_failed() {
        log::error!(
            "{} of {} runs failed",
            report.aggregate.failed,
            report.aggregate.runs
        );
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let report = match &args.trace {
        Some(path) => verify_trace(path)?,
        None => {
            let path = args.scenario.scenario.as_deref();
            let cfg = load_config(path, args.seed)?;
            let source = path.map_or_else(|| "built-in".to_string(), |p| p.display().to_string());
            verify_scenario(&cfg, &source)?
        }
    };
    print_json(&report, io::stdout().lock())?;
    if report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &report.hard_failures {
            log::error!("{f}");
        }
        Ok(ExitCode::from(EXIT_VERIFY_FAILED))
    }
}

fn serve_cmd(args: ServeArgs) -> Result<ExitCode> {
    let cfg = load_config(args.scenario.scenario.as_deref(), args.seed)?;
    let opts = ServeOptions {
        tick_hz: args.tick_hz,
        max_manual_speed: args.max_speed,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        log::info!("serving on ws://{}/ws", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        serve(listener, cfg, opts, shutdown).await
    })?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Batch(a) => batch(a),
        Command::Verify(a) => verify(a),
        Command::Serve(a) => serve_cmd(a),
    };
    result.unwrap_or_else(|e| {
        log::error!("{e:#}");
        ExitCode::FAILURE
    })
}
