use std::path::PathBuf;
use std::process::ExitCode;

use abcage::commands;
use abcage::config::{Format, Overrides};
use abcage::{Command, IpnDefinition, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};

/// Aharonov-Bohm caging on multi-path lattices.
///
/// Exit codes: 0 ok, 1 config error, 2 numeric failure, 3 sweep finished
/// with failed (NaN) points.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Disorder seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// IPN definition.
    #[arg(long, global = true, value_enum)]
    ipn: Option<IpnArg>,
    /// Comma-separated output formats (csv,json,svg).
    #[arg(long, global = true, value_delimiter = ',')]
    format: Option<Vec<Format>>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Flat-band condition of the configured flux.
    Check,
    /// Bloch bands and flatness of the top band.
    Bands,
    /// Closed (Hermitian or non-Hermitian) dynamics of one excitation.
    Evolve,
    /// Dynamics with on-site loss into a sink.
    Lindblad,
    /// Disorder-averaged dynamics over seeded realizations.
    Ensemble,
    /// Two-parameter map of the IPN fluctuation.
    Sweep,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum IpnArg {
    PerSite,
    PerCell,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Check => Command::Check,
        Cmd::Bands => Command::Bands,
        Cmd::Evolve => Command::Evolve,
        Cmd::Lindblad => Command::Lindblad,
        Cmd::Ensemble => Command::Ensemble,
        Cmd::Sweep => Command::Sweep,
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }

    let mut config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        directory: cli.out.clone(),
        seed: cli.seed,
        ipn: cli.ipn.map(|i| match i {
            IpnArg::PerSite => IpnDefinition::PerSite,
            IpnArg::PerCell => IpnDefinition::PerCell,
        }),
        formats: cli.format.clone(),
    });
    let resolved = match config.resolve(command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };

    match commands::execute(&resolved, cli.threads) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            println!("wrote {} files to {}", outcome.files.len(), resolved.directory.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
