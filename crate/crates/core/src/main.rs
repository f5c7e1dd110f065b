use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fbpinn::harness::{
    export_gram_pattern_for, run_experiment_with, run_sweep, HarnessError, RunConfig,
};

#[derive(Parser)]
#[command(name = "fbpinn", version, about = "Domain-decomposed PINN training runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write the run directory.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print every n-th iteration (0 disables progress output).
        #[arg(long, default_value_t = 100)]
        every: usize,
    },
    /// Export the Gram matrix sparsity pattern of the initialized model.
    Gram {
        config: PathBuf,
        /// Output directory (overrides `out_dir`); the pattern goes to `gram_pattern.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train consecutive seeds starting at `seed` and summarize the errors.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, out, every } => {
            let cfg = load(&config, out)?;
            let report = run_experiment_with(&cfg, |r| {
                if every > 0 && r.iter % every == 0 {
                    eprintln!("iter {:>6}  loss {:.4e}  |grad| {:.3e}", r.iter, r.loss, r.grad_norm);
                }
            })?;
            println!(
                "iterations {}  final_loss {:.4e}  rel_l2_error {:.4e}  time {:.1}s",
                report.iterations, report.final_loss, report.rel_l2_error, report.wall_time_s
            );
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Gram { config, out } => {
            let cfg = load(&config, out)?;
            let path = cfg.out_dir.join("gram_pattern.txt");
            let nnz = export_gram_pattern_for(&cfg, &path)?;
            println!("{nnz} nonzeros written to {}", path.display());
        }
        Command::Sweep { config, seeds, out } => {
            let cfg = load(&config, out)?;
            let summary = run_sweep(&cfg, seeds, |r| {
                eprintln!(
                    "seed {:>4}  iterations {:>6}  final_loss {:.4e}  rel_l2_error {:.4e}",
                    r.seed, r.iterations, r.final_loss, r.rel_l2_error
                );
            })?;
            println!(
                "median rel_l2_error {:.4e}  best {:.4e}",
                summary.median_error(),
                summary.best_error()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
