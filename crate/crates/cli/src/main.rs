use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod peer;
mod qm;

#[derive(Parser)]
#[command(
    name = "evie",
    version,
    about = "Serverless multiplayer city-building peer"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an interactive peer
    Peer(peer::PeerArgs),
    /// Run a scenario script on a simulated network
    Scenario {
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Edit and check the question bank
    Qm(qm::QmArgs),
}

fn run_scenario(script: &Path, seed: u64) -> ExitCode {
    match evie_core::scenario::run_file(script, seed) {
        Ok(report) => {
            print!("{report}");
            if report.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", script.display());
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Peer(args) => match peer::run(args) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
        Cmd::Scenario { script, seed } => run_scenario(&script, seed),
        Cmd::Qm(args) => qm::run(args),
    }
}
