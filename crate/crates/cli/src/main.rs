use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgdvit_cli as cmd;
use sgdvit_core::config::RunConfig;
use sgdvit_core::{CoreError, Result};

/// Saliency-guided dynamic vision transformer tracker.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error,
/// 4 numerical failure.
#[derive(Parser)]
#[command(name = "sgdvit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on one sequence and write a checkpoint plus its loss log.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
    },
    /// Track a sequence; writes results.txt and confidence.csv.
    Track {
        #[arg(long)]
        config: PathBuf,
        /// Sequence directory (defaults to paths.sequence).
        #[arg(long)]
        seq: Option<PathBuf>,
        /// Output directory (defaults to paths.output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a results file against ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Directory for frames.csv and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token counts and multiply-accumulates at forced fine-window densities.
    BenchTokens {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = cmd::DEFAULT_DENSITIES)]
        densities: Vec<f64>,
        /// Search frames measured per density.
        #[arg(long, default_value_t = 1)]
        frames: usize,
        /// CSV destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic sequence directory from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and track every architecture variant with one configuration.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Directory for ablation.csv (defaults to paths.output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dir_arg(given: Option<PathBuf>, fallback: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    given.or_else(|| fallback.clone()).ok_or_else(|| CoreError::config(key, "required but not set"))
}

fn print_report(r: &sgdvit_core::metrics::MetricReport) {
    println!(
        "precision20 {:.4}  norm_precision {:.4}  success_auc {:.4}  mean_iou {:.4}",
        r.precision20, r.norm_precision, r.success_auc, r.mean_iou
    );
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainToy { config } => {
            let cfg = RunConfig::load(&config)?;
            let every = (cfg.train.iterations / 20).max(1);
            let out = cmd::train_toy(&cfg, |r| {
                if r.iteration % every == 0 || r.iteration == 1 {
                    eprintln!("iter {:>5}  lr {:.2e}  loss {:.4}  cls {:.4}  reg {:.4}", r.iteration, r.lr, r.loss, r.cls, r.reg);
                }
            })?;
            println!(
                "eval loss {:.4} -> {:.4} (ratio {:.3}), {} parameters",
                out.log.initial_eval,
                out.log.final_eval,
                out.log.ratio(),
                out.params
            );
            println!("checkpoint {}", out.checkpoint.display());
            println!("loss log {}", out.log_path.display());
        }
        Command::Track { config, seq, out } => {
            let cfg = RunConfig::load(&config)?;
            let seq = dir_arg(seq, &cfg.paths.sequence, "paths.sequence")?;
            let out = dir_arg(out, &cfg.paths.output, "paths.output")?;
            let r = cmd::track(&cfg, &seq, &out)?;
            println!("{} frames -> {}", r.boxes.len(), r.results.display());
            if let Some(rep) = &r.report {
                print_report(rep);
            }
        }
        Command::Eval { results, gt, out } => {
            let rep = cmd::eval(&results, &gt, out.as_deref())?;
            print!("{}", rep.summary_csv());
        }
        Command::BenchTokens { config, densities, frames, out } => {
            let cfg = RunConfig::load(&config)?;
            let csv = cmd::bench_csv(&cmd::bench_tokens(&cfg, &densities, frames)?);
            match out {
                Some(p) => write_file(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Synth { spec, out } => {
            let s = cmd::synth(&spec, &out)?;
            println!("{} frames of {}x{} -> {}", s.frames, s.width, s.height, out.display());
        }
        Command::Ablate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out = dir_arg(out, &cfg.paths.output, "paths.output")?;
            let every = (cfg.train.iterations / 4).max(1);
            let rows = cmd::ablate(&cfg, &out, |v, r| {
                if r.iteration % every == 0 {
                    eprintln!("{:<8} iter {:>5}  loss {:.4}", v.name(), r.iteration, r.loss);
                }
            })?;
            print!("{}", cmd::ablation_csv(&rows));
        }
    }
    Ok(())
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| CoreError::io(p, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
