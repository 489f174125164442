use std::path::PathBuf;
use std::process::ExitCode;

use cilwalk_cli::output::create_run_dir;
use cilwalk_cli::{run_command, CliError, Command, ExperimentConfig, EXIT_VERIFICATION_FAILED};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cilwalk", version, about = "Random-walk learning under Pac-Man attacks with Create-If-Late")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override run.seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replications and sweep points
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root; each run writes into a fresh subdirectory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Run the population process and write trace CSVs
    Simulate,
    /// Quasi-stationary distribution of the attacked chain
    Qsd,
    /// RW-SGD along surviving chains plus the optima report
    Learn,
    /// Empirical bound checks; exit 2 on failure
    Verify,
    /// Cartesian sweep over config fields
    Sweep,
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Qsd => Command::Qsd,
        Cmd::Learn => Command::Learn,
        Cmd::Verify => Command::Verify,
        Cmd::Sweep => Command::Sweep,
    };
    cfg.validate_seeds()?;
    if command == Command::Sweep {
        cfg.expand_sweep()?;
    } else {
        cfg.resolve()?;
    }
    let dir = create_run_dir(&cli.out, command.name(), &cfg)?;
    let outcome = run_command(command, &cfg, &dir)?;
    println!("{}", serde_json::to_string_pretty(&outcome.stdout)?);
    eprintln!("results in {}", dir.display());
    Ok(if outcome.passed { 0 } else { EXIT_VERIFICATION_FAILED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
