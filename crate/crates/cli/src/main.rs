use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quadhmm_cli::commands::{
    cmd_bench, cmd_decode, cmd_evaluate, cmd_simulate, write_bench, write_bench_to,
};
use quadhmm_cli::config::{Estimator, RunConfig};
use quadhmm_cli::io::write_json;
use quadhmm_cli::{CliError, CliResult};

/// Grid-HMM localization from anchor ranges.
#[derive(Parser, Debug)]
#[command(name = "quadhmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scenario (anchors, ranges, truth, metadata).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a trajectory from a scenario directory.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Directory with anchors.csv and ranges.csv (truth.csv optional).
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the config estimator.
        #[arg(long, value_enum)]
        estimator: Option<Estimator>,
        /// Output directory for trajectory.csv and report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimate (t,x,y) against truth (t,x,y).
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time estimators over the configured grid/horizon matrix.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Write the CSV table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common, estimator: Option<Estimator>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(e) = estimator {
        cfg.estimator = e;
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common, out } => {
            let cfg = load(&common, None)?;
            let scenario = cmd_simulate(&cfg, &out)?;
            eprintln!(
                "wrote {} frames to {}",
                scenario.frames.len(),
                out.display()
            );
        }
        Command::Decode {
            common,
            scenario,
            estimator,
            out,
        } => {
            let cfg = load(&common, estimator)?;
            let report = cmd_decode(&cfg, &scenario, &out)?;
            emit(&serde_json::to_string_pretty(&report).expect("serializable"))?;
        }
        Command::Evaluate {
            estimate,
            truth,
            out,
        } => {
            let eval = cmd_evaluate(&estimate, &truth)?;
            match out {
                Some(path) => write_json(&path, &eval)?,
                None => emit(&serde_json::to_string_pretty(&eval).expect("serializable"))?,
            }
        }
        Command::Bench { common, out } => {
            let cfg = load(&common, None)?;
            let rows = cmd_bench(&cfg)?;
            match out {
                Some(path) => write_bench(&path, &rows)?,
                None => {
                    let mut buf = Vec::new();
                    write_bench_to(&mut buf, &rows).expect("in-memory write");
                    emit(String::from_utf8_lossy(&buf).trim_end())?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
