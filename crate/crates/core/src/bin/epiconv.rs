use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use epiconv::cli::{
    cmd_eval, cmd_predict, cmd_train, DataSource, RunConfig, REPORT_JSON_FILE, REPORT_TEXT_FILE,
};
use epiconv::{Architecture, Job, TrainConfig};

#[derive(Parser)]
#[command(
    name = "epiconv",
    version,
    about = "Residual 1D CNN for epileptic EEG classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, loss log and test report.
    Train {
        /// Labelled CSV (id, X1..X178, y).
        #[arg(
            long,
            required_unless_present = "synthetic",
            conflicts_with = "synthetic"
        )]
        data: Option<PathBuf>,
        /// Use generated sinusoid data instead of a CSV.
        #[arg(long)]
        synthetic: bool,
        /// Samples per class for --synthetic.
        #[arg(long, default_value_t = 200)]
        synthetic_per_class: usize,
        /// binary or multi.
        #[arg(long, default_value = "binary")]
        job: Job,
        /// proposed, skipless or lenet.
        #[arg(long, default_value = "proposed")]
        arch: Architecture,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a labelled CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Must match the checkpoint's job when given.
        #[arg(long)]
        job: Option<Job>,
        /// Directory for report.txt / report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print predictions for an unlabelled CSV (id, X1..X178).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> epiconv::Result<()> {
    match cli.command {
        Command::Train {
            data,
            synthetic,
            synthetic_per_class,
            job,
            arch,
            epochs,
            seed,
            batch_size,
            lr,
            out,
        } => {
            let source = match (data, synthetic) {
                (Some(path), false) => DataSource::Csv(path),
                _ => DataSource::Synthetic {
                    per_class: synthetic_per_class,
                },
            };
            let cfg = RunConfig {
                source,
                architecture: arch,
                train: TrainConfig {
                    epochs,
                    batch_size,
                    learning_rate: lr,
                    seed,
                    job,
                },
                out_dir: out,
            };
            let result = cmd_train(&cfg)?;
            for r in &result.report.records {
                println!(
                    "epoch {:>3}  train_loss {:.6}  val_loss {:.6}",
                    r.epoch_index, r.train_loss, r.val_loss
                );
            }
            println!(
                "best epoch {} (val_loss {:.6}); test accuracy {:.4}\n",
                result.report.best_epoch, result.report.best_val_loss, result.test_accuracy
            );
            print!("{}", result.test_report.to_text());
        }
        Command::Eval {
            model,
            data,
            job,
            out,
        } => {
            let report = cmd_eval(&model, &data, job)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| epiconv::Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                for (name, body) in [
                    (REPORT_TEXT_FILE, report.to_text()),
                    (REPORT_JSON_FILE, report.to_json()),
                ] {
                    let p = dir.join(name);
                    std::fs::write(&p, body)
                        .map_err(|e| epiconv::Error::Io { path: p, source: e })?;
                }
            }
            print!("{}", report.to_text());
        }
        Command::Predict { model, input } => {
            for line in cmd_predict(&model, &input)? {
                println!("{line}");
            }
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
