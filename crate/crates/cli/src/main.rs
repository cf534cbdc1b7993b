use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use llngm_cli::commands::{run_diagnose, run_fit, run_predict, run_score, run_simulate, Run};
use llngm_cli::config::RunConfig;
use llngm_cli::CliError;

#[derive(Parser)]
#[command(name = "llngm", version, about = "Fit, sample and score linear latent non-Gaussian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel chains.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate data from the configured model and parameter values.
    Simulate,
    /// MAP estimation and posterior sampling.
    Fit,
    /// Posterior-predictive draws at the target rows.
    Predict,
    /// Score predictive draws against observed targets.
    Score,
    /// Recompute convergence diagnostics from a trace file.
    Diagnose,
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::config("--config", "a configuration file is required"))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::config("--threads", e))?;
    }
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let out = cli.out.clone().unwrap_or_else(|| base.join(&config.output.dir));
    let run = Run { config, base, out };
    match cli.command {
        Command::Simulate => run_simulate(&run),
        Command::Fit => run_fit(&run),
        Command::Predict => run_predict(&run),
        Command::Score => {
            for (k, v) in run_score(&run)? {
                println!("{k}\t{v}");
            }
            Ok(())
        }
        Command::Diagnose => {
            let value = run_diagnose(&run)?;
            println!("{}", serde_json::to_string_pretty(&value).expect("json values always serialize"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
