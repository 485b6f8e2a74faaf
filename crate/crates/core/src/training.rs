//! Cross-entropy losses, Adam, and the epoch loop that keeps the weights of
//! the epoch with the lowest validation loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Job};
use crate::error::{Error, Result};
use crate::model::{GradientSet, Model};
use crate::tensor::{seeded_rng, softmax_slice, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// `-(y ln p + (1 - y) ln(1 - p))` on the clamped probability.
pub fn cross_entropy_binary(p: f64, y: usize) -> Result<f64> {
    if y > 1 {
        return Err(Error::InvalidLabel(format!(
            "binary label must be 0 or 1, got {y}"
        )));
    }
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
}

/// Mean over rows of `-ln p[label]`, probabilities floored at `PROB_CLAMP`.
pub fn cross_entropy_multi(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (m, c) = match probs.shape() {
        [m, c] => (*m, *c),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "probabilities must be [m, C], got {s:?}"
            )))
        }
    };
    if labels.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{m} probability rows for {} labels",
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidLabel(format!(
                "label {y} outside {c} classes"
            )));
        }
        total -= probs.row(i)[y].max(PROB_CLAMP).ln();
    }
    Ok(total / m as f64)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-sample loss and its gradient with respect to the logits. One logit
/// means sigmoid + binary cross-entropy, otherwise softmax + categorical.
pub fn loss_and_logit_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() == 1 {
        let p = sigmoid(logits[0]);
        let loss = cross_entropy_binary(p, label)?;
        Ok((loss, vec![p - label as f64]))
    } else {
        if label >= logits.len() {
            return Err(Error::InvalidLabel(format!(
                "label {label} outside {} classes",
                logits.len()
            )));
        }
        let mut probs = vec![0.0; logits.len()];
        softmax_slice(logits, &mut probs);
        let loss = -probs[label].max(PROB_CLAMP).ln();
        probs[label] -= 1.0;
        Ok((loss, probs))
    }
}

/// Class probabilities from raw logits (`[1 - p, p]` for a single logit).
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    if logits.len() == 1 {
        let p = sigmoid(logits[0]);
        vec![1.0 - p, p]
    } else {
        let mut probs = vec![0.0; logits.len()];
        softmax_slice(logits, &mut probs);
        probs
    }
}

/// Predicted class; ties go to the lowest index, and a single logit
/// predicts class 1 only when its sigmoid exceeds 0.5.
pub fn predict_class(logits: &[f64]) -> usize {
    if logits.len() == 1 {
        return usize::from(sigmoid(logits[0]) > 0.5);
    }
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub job: Job,
}

impl TrainConfig {
    pub fn new(job: Job, seed: u64) -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            seed,
            job,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Adam moment estimates, one pair per model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8).
pub fn optimizer_step(
    model: &mut Model,
    grads: &GradientSet,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if grads.grads.len() != model.params().len() || state.first_moment.len() != model.params().len()
    {
        return Err(Error::ShapeMismatch(
            "gradients or optimizer state do not match the model".into(),
        ));
    }
    for (p, g) in model.params().iter().zip(&grads.grads) {
        if p.value.shape() != g.value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape mismatch for {}",
                p.name
            )));
        }
        if !g.value.is_finite() {
            return Err(Error::TrainingDiverged {
                reason: format!("non-finite gradient for parameter {}", p.name),
                partial: None,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, (p, g)) in model.params_mut().iter_mut().zip(&grads.grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (((w, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.value.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch_index: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation loss of the untrained model.
    pub initial_val_loss: f64,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub report: TrainReport,
    /// Weights at the end of `report.best_epoch`.
    pub best_model: Model,
}

fn check_labels(model: &Model, data: &Dataset) -> Result<()> {
    if data.signal_length != model.input_length() {
        return Err(Error::ShapeMismatch(format!(
            "samples have length {}, model expects {}",
            data.signal_length,
            model.input_length()
        )));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::InvalidLabel(format!(
            "dataset has {} classes, model predicts {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    Ok(())
}

/// Mean loss and predicted classes over `data`, forward passes only.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, Vec<usize>)> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    check_labels(model, data)?;
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let logits = model.logits(&data.sample(i))?;
        let (loss, _) = loss_and_logit_grad(logits.data(), data.labels[i])?;
        total += loss;
        preds.push(predict_class(logits.data()));
    }
    Ok((total / data.len() as f64, preds))
}

/// Trains `model` for `config.epochs` epochs and returns the per-epoch
/// losses together with the weights of the lowest-validation-loss epoch
/// (the earliest one on ties).
///
/// Each epoch visits the training rows in an order drawn from
/// `(config.seed, epoch)`; each mini-batch takes one Adam step on the mean
/// loss of its samples.
pub fn fit(
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mut model: Model,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be nonempty".into(),
        ));
    }
    if config.job.num_classes() != model.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "job {} needs {} classes, model has {}",
            config.job,
            config.job.num_classes(),
            model.num_classes()
        )));
    }
    check_labels(&model, train)?;
    check_labels(&model, val)?;

    let (initial_val_loss, _) = evaluate(&model, val)?;
    let mut report = TrainReport {
        initial_val_loss,
        records: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut best_model = model.clone();
    let mut state = OptimizerState::new(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let diverged = |reason: String, report: &TrainReport| Error::TrainingDiverged {
        reason,
        partial: Some(Box::new(report.clone())),
    };

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded_rng(config.seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = GradientSet::zeros_like(&model);
            for &i in batch {
                let (logits, cache) = model.forward(&train.sample(i))?;
                let (loss, mut dlogits) = loss_and_logit_grad(logits.data(), train.labels[i])?;
                epoch_loss += loss;
                dlogits.iter_mut().for_each(|g| *g *= scale);
                let dlogits = Tensor::from_vec(&[dlogits.len()], dlogits)?;
                model.backward_accumulate(&cache, &dlogits, &mut grads)?;
            }
            match optimizer_step(&mut model, &grads, &mut state, config.learning_rate) {
                Err(Error::TrainingDiverged { reason, .. }) => {
                    return Err(diverged(format!("epoch {epoch}: {reason}"), &report))
                }
                other => other?,
            }
        }
        let train_loss = epoch_loss / train.len() as f64;
        let (val_loss, _) = evaluate(&model, val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(diverged(
                format!("non-finite loss in epoch {epoch}"),
                &report,
            ));
        }
        report.records.push(EpochRecord {
            epoch_index: epoch,
            train_loss,
            val_loss,
        });
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best_model = model.clone();
        }
    }
    Ok(FitOutcome { report, best_model })
}
