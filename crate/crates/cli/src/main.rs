use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use trades_cli::{execute, Command, Overrides, EXIT_OK, EXIT_USAGE, OUT_DIR_ENV};

#[derive(Parser)]
#[command(
    name = "trades",
    version,
    about = "Distributed Nash equilibrium seeking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run TRADES and write trace.csv, report.json and config.echo.
    Run(Args),
    /// Check the standing assumptions and the graph without iterating.
    Validate(Args),
    /// Map convergence over the configured gamma x delta grid.
    Sweep(Args),
    /// Voltage case study: run outputs plus voltage profiles.
    CaseStudy(Args),
}

#[derive(clap::Args)]
struct Args {
    config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", long_help = format!("Output directory. Overrides {OUT_DIR_ENV} and the config."))]
    out: Option<PathBuf>,
    /// Seed of the random initial profile.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    oracle: Option<Toggle>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK } as u8);
        }
    };
    let (command, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::CaseStudy(a) => (Command::CaseStudy, a),
    };
    let ov = Overrides {
        out: args.out,
        seed: args.seed,
        oracle: args.oracle.map(|t| matches!(t, Toggle::On)),
    };
    ExitCode::from(execute(command, &args.config, &ov) as u8)
}
