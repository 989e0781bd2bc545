use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use phasemix::cli::{self, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Steady,
    Verify,
    Mix,
    Decay,
}

/// Phase-mixing experiments around trapped radial steady states.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, env = "PHASEMIX_THREADS")]
    threads: Option<usize>,
    /// Recorded in the manifest; the pipeline itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("phasemix: cannot start {n} threads: {e}");
            return ExitCode::from(4);
        }
    }
    let cmd = match args.command {
        Cmd::Steady => Command::Steady,
        Cmd::Verify => Command::Verify,
        Cmd::Mix => Command::Mix,
        Cmd::Decay => Command::Decay,
    };
    match cli::run(cmd, &args.config, &args.out, args.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("phasemix {}: {e}", cmd.name());
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
