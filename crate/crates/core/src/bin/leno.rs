use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use leno::io::PipelineConfig;
use leno::pipeline::{run, Command, Context};

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Eigs,
    Simulate,
    Train,
    Predict,
    Transfer,
    Treat,
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Eigs => Command::Eigs,
            Cmd::Simulate => Command::Simulate,
            Cmd::Train => Command::Train,
            Cmd::Predict => Command::Predict,
            Cmd::Transfer => Command::Transfer,
            Cmd::Treat => Command::Treat,
            Cmd::Report => Command::Report,
        }
    }
}

/// Learn and analyse reaction-diffusion biomarker dynamics with
/// Laplacian-eigenfunction neural operators.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = PipelineConfig::load(&cli.config)
        .and_then(|cfg| Context::new(cfg, cli.seed, cli.out))
        .and_then(|ctx| run(cli.command.into(), &ctx));
    match result {
        Ok(out) => {
            for line in out.summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
