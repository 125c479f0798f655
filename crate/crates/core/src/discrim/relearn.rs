//! Alternating unlearn and relearn updates.

use super::{loss_less_backward, AttributionVector};
use crate::model::train::{classification_step, report, ActiveTerms, TrainConfig};
use crate::model::{backward_feature, forward_feature, AdamW, DetectorParams, Fusion, Gradients, ModelError, Prepared};
use crate::replay::{LossReport, MemoryBuffer};

/// One update on `lambda * L_less` over `batch`, masks taken from the
/// current parameters. Returns the unweighted loss.
pub fn unlearn_step(
    params: &mut DetectorParams,
    opt: &mut AdamW,
    batch: &[&Prepared],
    fusion: Fusion,
    config: &TrainConfig,
) -> Result<f64, ModelError> {
    let mut grads = Gradients::zeros_like(params);
    let scale = config.weights.lambda / batch.len().max(1) as f64;
    let mut total = 0.0;
    for sample in batch {
        let tape = forward_feature(params, sample, fusion);
        let mask = AttributionVector::compute(&params.head, &tape.f, config.ig_steps).mask();
        let (l, df) = loss_less_backward(&tape.f, &mask, &params.head, scale, &mut grads);
        total += l;
        backward_feature(params, sample, &tape, fusion, &df, &mut grads);
    }
    let loss = total / batch.len().max(1) as f64;
    if !loss.is_finite() {
        return Err(ModelError::NonFinite {
            term: "less",
            value: loss,
            step: opt.step + 1,
        });
    }
    opt.apply(params, &grads);
    Ok(loss)
}

/// `cycles` rounds of an unlearn update followed by a classification
/// update; zero cycles is a single classification update.
pub fn relearn_cycle(
    params: &mut DetectorParams,
    opt: &mut AdamW,
    batch: &[&Prepared],
    memory: &MemoryBuffer,
    config: &TrainConfig,
    active: &ActiveTerms,
    cycles: usize,
) -> Result<LossReport, ModelError> {
    let mut less = 0.0;
    let mut terms = (0.0, 0.0, 0.0);
    for _ in 0..cycles {
        less = unlearn_step(params, opt, batch, active.fusion, config)?;
        terms = classification_step(params, opt, batch, memory, config, active)?;
    }
    if cycles == 0 {
        terms = classification_step(params, opt, batch, memory, config, active)?;
    }
    report(terms.0, terms.1, less, terms.2, config.weights, opt.step)
}
