//! The `train`, `eval` and `predict` commands behind the binary.

use std::fs;
use std::path::{Path, PathBuf};

use crate::baselines::Architecture;
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMetadata};
use crate::data::{
    load_csv, load_unlabeled_csv, map_labels_for_job, split, standardize, synth_generate,
    write_csv, Dataset, Job, SplitSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, ClassificationReport, ConfusionMatrix};
use crate::model::SIGNAL_LENGTH;
use crate::tensor::Tensor;
use crate::training::{evaluate, fit, predict_class, probabilities, TrainConfig, TrainReport};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSSES_FILE: &str = "losses.csv";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
/// Unstandardised test partition in the input CSV layout.
pub const TEST_SPLIT_FILE: &str = "test_split.csv";

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic { per_class: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataSource::Synthetic { per_class: 0 } = self.source {
            return Err(Error::InvalidParameter(
                "synthetic samples per class must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub report: TrainReport,
    pub test_report: ClassificationReport,
    pub test_accuracy: f64,
    pub files: Vec<PathBuf>,
}

/// Loads (or generates) the data for `job` in that job's labelling.
pub fn load_for_job(source: &DataSource, job: Job, seed: u64) -> Result<Dataset> {
    match source {
        DataSource::Csv(path) => map_labels_for_job(&load_csv(path)?, job),
        DataSource::Synthetic { per_class } => synth_generate(seed, *per_class, job.num_classes()),
    }
}

pub fn losses_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in &report.records {
        s.push_str(&format!(
            "{},{},{}\n",
            r.epoch_index, r.train_loss, r.val_loss
        ));
    }
    s
}

fn report_for(ckpt: &Checkpoint, data: &Dataset) -> Result<(ClassificationReport, f64)> {
    let (_, preds) = evaluate(&ckpt.model, data)?;
    let cm = ConfusionMatrix::from_predictions(&preds, &data.labels, ckpt.class_names.clone())?;
    Ok((classification_report(&cm), cm.accuracy()))
}

/// Load, split 76/12/12, standardise, train, and write the checkpoint, loss
/// log, test report and test partition into `out_dir`. Nothing is left
/// behind when a step fails.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let job = cfg.train.job;
    let seed = cfg.train.seed;
    let data = load_for_job(&cfg.source, job, seed)?;
    let (train, val, test) = split(&data, &SplitSpec::standard(seed))?;
    let (train_s, rest) = standardize(&train, &[&val, &test])?;
    let (val_s, test_s) = (&rest[0], &rest[1]);

    let model = cfg
        .architecture
        .build(job.num_classes(), SIGNAL_LENGTH, seed)?;
    let outcome = fit(&train_s, val_s, &cfg.train, model)?;
    let ckpt = Checkpoint {
        model: outcome.best_model,
        job,
        class_names: data.class_names.clone(),
        feature_stats: train_s.stats.clone(),
        training: Some(TrainingMetadata {
            architecture: cfg.architecture,
            best_epoch: outcome.report.best_epoch,
            best_val_loss: outcome.report.best_val_loss,
            seed,
            config: cfg.train,
        }),
    };
    let (test_report, test_accuracy) = report_for(&ckpt, test_s)?;

    let files = write_outputs(&cfg.out_dir, |dir, written| {
        let p = dir.join(CHECKPOINT_FILE);
        written.push(p.clone());
        save_checkpoint(&ckpt, &p)?;
        write_file(dir.join(LOSSES_FILE), losses_csv(&outcome.report), written)?;
        write_file(dir.join(REPORT_TEXT_FILE), test_report.to_text(), written)?;
        write_file(dir.join(REPORT_JSON_FILE), test_report.to_json(), written)?;
        let p = dir.join(TEST_SPLIT_FILE);
        written.push(p.clone());
        write_csv(&test, job, &p)
    })?;
    Ok(TrainOutput {
        report: outcome.report,
        test_report,
        test_accuracy,
        files,
    })
}

fn write_file(path: PathBuf, contents: String, written: &mut Vec<PathBuf>) -> Result<()> {
    written.push(path.clone());
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Runs `write` against `dir`, deleting every file it started on failure.
fn write_outputs(
    dir: &Path,
    write: impl FnOnce(&Path, &mut Vec<PathBuf>) -> Result<()>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    match write(dir, &mut written) {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

/// Scores a labelled CSV with a stored model.
pub fn cmd_eval(
    model_path: &Path,
    data_path: &Path,
    job: Option<Job>,
) -> Result<ClassificationReport> {
    let ckpt = load_checkpoint(model_path)?;
    if let Some(job) = job {
        if job != ckpt.job {
            return Err(Error::InvalidLabel(format!(
                "checkpoint was trained for the {} job, data requested as {job}",
                ckpt.job
            )));
        }
    }
    let data = map_labels_for_job(&load_csv(data_path)?, ckpt.job)?;
    if data.is_empty() {
        return Err(Error::InvalidLabel(format!(
            "no rows of {} belong to the {} job",
            data_path.display(),
            ckpt.job
        )));
    }
    let data = match &ckpt.feature_stats {
        Some(stats) => data.apply_stats(stats)?,
        None => data,
    };
    Ok(report_for(&ckpt, &data)?.0)
}

/// One line per input row: identifier, predicted class name and the class
/// probabilities.
pub fn cmd_predict(model_path: &Path, input_path: &Path) -> Result<Vec<String>> {
    let ckpt = load_checkpoint(model_path)?;
    let (ids, rows) = load_unlabeled_csv(input_path)?;
    let mut lines = Vec::with_capacity(rows.len());
    for (id, mut row) in ids.into_iter().zip(rows) {
        if let Some(stats) = &ckpt.feature_stats {
            for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = (*v - m) / s;
            }
        }
        let x = Tensor::from_vec(&[1, row.len()], row)?;
        let logits = ckpt.model.logits(&x)?;
        let class = predict_class(logits.data());
        let mut line = format!("{id},{}", ckpt.class_names[class]);
        for p in probabilities(logits.data()) {
            line.push_str(&format!(",{p}"));
        }
        lines.push(line);
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_csv_layout() {
        let report = TrainReport {
            initial_val_loss: 1.0,
            records: vec![
                crate::training::EpochRecord {
                    epoch_index: 1,
                    train_loss: 0.5,
                    val_loss: 0.25,
                },
                crate::training::EpochRecord {
                    epoch_index: 2,
                    train_loss: 0.125,
                    val_loss: 0.3,
                },
            ],
            best_epoch: 1,
            best_val_loss: 0.25,
        };
        assert_eq!(
            losses_csv(&report),
            "epoch,train_loss,val_loss\n1,0.5,0.25\n2,0.125,0.3\n"
        );
    }

    #[test]
    fn failed_write_removes_partial_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_outputs(dir.path(), |d, written| {
            write_file(d.join("a.txt"), "x".into(), written)?;
            Err(Error::InvalidInput("boom".into()))
        });
        assert!(err.is_err());
        assert!(!dir.path().join("a.txt").exists());
    }

    #[test]
    fn invalid_run_config_is_rejected_before_work() {
        let cfg = RunConfig {
            source: DataSource::Synthetic { per_class: 0 },
            architecture: Architecture::Proposed,
            train: TrainConfig::new(Job::Binary, 1),
            out_dir: PathBuf::from("/nonexistent/never"),
        };
        assert!(cmd_train(&cfg).is_err());
        assert!(!cfg.out_dir.exists());
    }
}
