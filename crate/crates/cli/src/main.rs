use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sod_net::pipeline::{self, AblationConfig, SyntheticSpec, TrainConfig};
use sod_net::{gradsuite, Error, ModelConfig, Preset};

/// Salient object detection: data synthesis, training, inference and
/// evaluation.
#[derive(Debug, Parser)]
#[command(name = "sodnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a JSON config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write one saliency PNG per input image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth; writes per_image.csv,
    /// aggregate.json and curves.csv.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic image/mask dataset.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and FLOP tables of the configured model, followed by the
    /// size comparison of the paper-scale preset.
    Summary {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient family and module.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate the six module/loss combinations on synthetic data.
    Ablation {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        images: usize,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { config } => {
            let cfg = TrainConfig::from_file(&config)?;
            let report = pipeline::train(&cfg)?;
            let last = report.epochs.last().map(|e| e.loss).unwrap_or(f64::NAN);
            println!(
                "trained {} steps over {} epochs, last epoch loss {last:.5}",
                report.steps,
                report.epochs.len()
            );
            println!("final checkpoint: {}", report.final_checkpoint.display());
            println!("best checkpoint: {}", report.best_checkpoint.display());
            println!("log: {}", report.log.display());
        }
        Command::Infer { ckpt, input, out } => {
            let written = pipeline::infer(&ckpt, &input, &out)?;
            println!("wrote {} saliency maps to {}", written.len(), out.display());
        }
        Command::Eval { pred, gt, out } => {
            let agg = pipeline::evaluate(&pred, &gt, &out)?;
            println!(
                "{} images: mae {:.4}, s-measure {:.4}, max F {:.4}",
                agg.count, agg.mae, agg.s_measure, agg.max_f
            );
        }
        Command::Synth { count, size, seed, out } => {
            let (images, masks) = pipeline::generate(&SyntheticSpec::new(count, size, seed), &out)?;
            println!("wrote {count} pairs to {} and {}", images.display(), masks.display());
        }
        Command::Summary { config } => {
            let model = match config {
                Some(path) => TrainConfig::from_file(&path)?.model,
                None => ModelConfig::tiny(),
            };
            print!("{}", pipeline::render_summary(&pipeline::summarize(&model)?));
            println!();
            print!("{}", pipeline::render_diagnostics(&pipeline::diagnostics(&ModelConfig::preset(Preset::Paper))?));
        }
        Command::Gradcheck { seed } => {
            let reports = gradsuite::run(seed)?;
            for r in &reports {
                println!("{r}");
            }
            if let Some(failed) = reports.iter().find(|r| !r.passed) {
                return Err(Error::Numerical { epoch: 0, batch: 0, term: format!("gradient of {}", failed.label) });
            }
        }
        Command::Ablation { out, images, steps, seed } => {
            let cfg = AblationConfig { images, steps, seed, ..AblationConfig::desk_scale(out) };
            let report = pipeline::run_ablation(&cfg)?;
            print!("{}", report.table());
            if let Some(ok) = report.full_beats_baseline() {
                println!(
                    "full model MAE {} baseline MAE (expectation, not a gate)",
                    if ok { "does not exceed" } else { "exceeds" }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
