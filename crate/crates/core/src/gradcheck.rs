//! Central finite-difference checks of analytic model gradients.
//!
//! Only forward passes are used to build the numerical estimate, so the
//! check is independent of the backward code it validates.

use rand::seq::index::sample;

use crate::error::Result;
use crate::model::Model;
use crate::tensor::{seeded_rng, Tensor};
use crate::training::loss_and_logit_grad;

/// Magnitudes below this are compared absolutely rather than relatively.
/// With a step of 1e-6 the central difference itself carries about 1e-10
/// of rounding noise, so smaller gradients cannot be resolved to 1e-6.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and coordinate of the worst agreement.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

fn sample_loss(model: &Model, x: &Tensor, label: usize) -> Result<f64> {
    let logits = model.logits(x)?;
    Ok(loss_and_logit_grad(logits.data(), label)?.0)
}

/// Compares the cross-entropy gradient of `model` at `(x, label)` with
/// central differences of step `h`, on up to `coords_per_tensor` randomly
/// chosen coordinates of every parameter tensor.
pub fn check_model_gradients(
    model: &Model,
    x: &Tensor,
    label: usize,
    coords_per_tensor: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (logits, cache) = model.forward(x)?;
    let (_, dlogits) = loss_and_logit_grad(logits.data(), label)?;
    let analytic = model.backward(&cache, &Tensor::from_vec(&[dlogits.len()], dlogits)?)?;

    let mut probe = model.clone();
    let mut rng = seeded_rng(seed, 0);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    for p in 0..model.params().len() {
        let len = model.params()[p].value.len();
        let coords: Vec<usize> = if len <= coords_per_tensor {
            (0..len).collect()
        } else {
            sample(&mut rng, len, coords_per_tensor).into_vec()
        };
        for i in coords {
            let orig = probe.params()[p].value.data()[i];
            probe.params_mut()[p].value.data_mut()[i] = orig + h;
            let up = sample_loss(&probe, x, label)?;
            probe.params_mut()[p].value.data_mut()[i] = orig - h;
            let down = sample_loss(&probe, x, label)?;
            probe.params_mut()[p].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.grads[p].value.data()[i], numeric);
            report.coordinates_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((model.params()[p].name.clone(), i));
            }
        }
    }
    Ok(report)
}
