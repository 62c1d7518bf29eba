use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use volterra_cli::engine::EXIT_CONFIG;
use volterra_cli::{run, verify, Options, RunConfig};

#[derive(Parser)]
#[command(name = "volterra", version, about = "Solve and cross-check ODE systems from a TOML config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Relative tolerance for series and Picard stopping (overrides the config).
    #[arg(long, global = true)]
    rtol: Option<f64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = volterra_core::ltv::DEFAULT_SEED)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured system and write CSV and report files.
    Run {
        /// System definition (TOML)
        config: PathBuf,
    },
    /// Run the cross-route invariant suite and write a residual report.
    Verify {
        /// System definition (TOML)
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    if let Some(r) = cli.rtol {
        if !(r > 0.0 && r < 1.0) {
            eprintln!("error: --rtol must lie in (0, 1)");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let opts = Options { rtol: cli.rtol, out_dir: cli.out_dir, seed: cli.seed };
    let (path, verifying) = match &cli.command {
        Command::Run { config } => (config, false),
        Command::Verify { config } => (config, true),
    };
    let result = RunConfig::load(path).map_err(Into::into).and_then(|cfg| {
        if verifying {
            verify(&cfg, &opts)
        } else {
            run(&cfg, &opts)
        }
    });
    match result {
        Ok(outcome) => {
            if verifying {
                print!("{}", outcome.report);
            } else {
                for p in &outcome.written {
                    println!("wrote {}", p.display());
                }
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
