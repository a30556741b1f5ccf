use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lensless_cli::commands::{run_evaluate, run_reconstruct, run_simulate};
use lensless_cli::config::ExperimentConfig;
use lensless_cli::error::CliError;
use lensless_cli::study::run_study;

/// Environment variable that overrides `--out`.
const OUT_ENV: &str = "LENSLESS_OUT";

#[derive(Parser)]
#[command(name = "lensless", version, about = "Coded-illumination lensless 3D imaging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (`key = value` lines); defaults to the desk preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; LENSLESS_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate measurements of the configured scenes.
    Simulate,
    /// Reconstruct volumes from simulated measurements.
    Reconstruct,
    /// Score reconstructions against ground truth.
    Evaluate,
    /// Run a comparison study.
    Study {
        /// pattern_count, baseline_sweep, pinhole_vs_mls or sweepcam_vs_coded
        #[arg(long)]
        study: String,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            ExperimentConfig::parse(&text, p.parent())?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let out = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .or(cli.out)
        .ok_or_else(|| CliError::Config(format!("no output directory: pass --out or set {OUT_ENV}")))?;
    let written = match &cli.command {
        Command::Simulate => run_simulate(&cfg, &out)?,
        Command::Reconstruct => run_reconstruct(&cfg, &out)?,
        Command::Evaluate => run_evaluate(&cfg, &out)?,
        Command::Study { study } => {
            let results = run_study(study, &cfg, &out, None)?;
            for r in &results {
                println!("{:<16} depth_rmse_cm {:.3}  ssim {:.3}", r.label, r.depth_rmse_cm, r.ssim);
            }
            vec![format!("{study}.csv")]
        }
    };
    for f in written {
        println!("wrote {}", out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lensless: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
