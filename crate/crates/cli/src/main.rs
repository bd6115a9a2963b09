use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pool_cli::{parse_config_for, run_ensemble, CliError};

#[derive(Parser)]
#[command(name = "pool", version, about = "Simulate and test the Pool aggregation model")]
struct Cli {
    /// Worker threads (overrides the document).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides the document and $POOL_OUTPUT_ROOT).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Only report errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact event-driven engine on a certified disk.
    SimulateExact { config: PathBuf },
    /// Fixed-step engine on a periodic box.
    SimulateBox { config: PathBuf },
    /// Extinction tables, progeny histograms and dominating paths.
    Branching { config: PathBuf },
    /// Run one estimator and write its report.
    Estimate { name: String, config: PathBuf },
    /// Analyze the trajectories of an earlier run.
    Analyze { name: String, config: PathBuf },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let (command, name, path) = match cli.command {
        Cmd::SimulateExact { config } => ("simulate-exact", None, config),
        Cmd::SimulateBox { config } => ("simulate-box", None, config),
        Cmd::Branching { config } => ("branching", None, config),
        Cmd::Estimate { name, config } => ("estimate", Some(name), config),
        Cmd::Analyze { name, config } => ("analyze", Some(name), config),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
    let mut cfg = parse_config_for(&text, Some(command), name.as_deref())?;
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Config(vec!["--workers violates workers >= 1".into()]));
        }
        cfg.workers = w;
    }
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }
    let outcome = run_ensemble(&cfg)?;
    if !cli.quiet {
        for r in &outcome.reports {
            println!("{:<28} {:>14.6} {:?}", r.name, r.estimate, r.verdict);
        }
        println!("wrote {} files to {}", outcome.files.len(), outcome.dir.display());
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
