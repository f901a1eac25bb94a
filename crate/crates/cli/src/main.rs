use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smrc_cli::{cmd_eval, cmd_plan, cmd_plot, cmd_pretrain, cmd_train, exit_code, parse_grid, Overrides};

/// Layered semantic JSCC experiments.
#[derive(Parser)]
#[command(name = "smrc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per training SNR (and the single-head baseline).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Parent directory for run directories.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated training SNRs in dB.
        #[arg(long)]
        snr_grid: Option<String>,
        /// Overwrite an existing run with the same config hash.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain the semantic extractors on raw images and report accuracy.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained run: sweeps, reference curves, CSVs and figures.
    Eval {
        /// Run directory printed by `train`.
        run: PathBuf,
        /// Subset of the trained SNRs to evaluate.
        #[arg(long)]
        snr_grid: Option<String>,
    },
    /// Redraw the figures of an evaluated run.
    Plot { run: PathBuf },
    /// Multicast cost of separate, single-block and multi-resolution coding.
    Plan {
        /// CSV tier table with columns block_symbols,rate.
        #[arg(long)]
        tiers: Option<PathBuf>,
        #[arg(long)]
        eta: Option<String>,
    },
}

fn run(cli: Cli) -> smrc::Result<()> {
    match cli.command {
        Command::Train { config, out, seed, snr_grid, force } => {
            let snr_grid = snr_grid.as_deref().map(parse_grid).transpose()?;
            let dir = cmd_train(&config, &Overrides { out, seed, snr_grid }, force)?;
            println!("{}", dir.display());
        }
        Command::Pretrain { config, out, seed } => {
            for r in cmd_pretrain(&config, &Overrides { out, seed, snr_grid: None })? {
                println!("layer {} head {}: raw test accuracy {:.4}", r.layer, r.head, r.test_accuracy);
            }
        }
        Command::Eval { run, snr_grid } => {
            let grid = snr_grid.as_deref().map(parse_grid).transpose()?;
            let r = cmd_eval(&run, grid.as_deref())?;
            for row in &r.sweep.rows {
                println!("{:>6} dB layer {}: PSNR {:.2} dB, avg recall {:.4}", row.training_snr_db, row.layer, row.psnr_db, row.avg_recall);
            }
            match r.jscc_beats_sscc {
                Some(b) => println!("JSCC above SSCC ({}) at every SNR: {b}", r.sscc_codec),
                None => println!("SSCC overlay uses the built-in {} codec; comparison is informational", r.sscc_codec),
            }
            println!("{}", run.display());
        }
        Command::Plot { run } => {
            for p in cmd_plot(&run)? {
                println!("{}", p.display());
            }
        }
        Command::Plan { tiers, eta } => {
            let r = cmd_plan(tiers.as_deref(), eta.as_deref())?;
            if let Some(n) = &r.note {
                eprintln!("{n}");
            }
            print!("{}", r.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
