//! Masked multi-label sigmoid cross-entropy.
//!
//! Each (proposal, class) entry is an independent binary problem. `Ignore`
//! entries contribute exactly zero loss and zero gradient.

use crate::assignment::{SupervisionMatrix, SupervisionState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Pre-sigmoid scores, `[num_proposals × num_classes]`.
pub type LogitMatrix = Matrix<f64>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Sum,
    /// Sum divided by the number of non-`Ignore` entries (1 if there are none).
    MeanSupervised,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub per_entry: Matrix<f64>,
    pub supervised_entries: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
pub fn binary_ce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn target(state: SupervisionState) -> Option<f64> {
    match state {
        SupervisionState::Positive => Some(1.0),
        SupervisionState::Negative => Some(0.0),
        SupervisionState::Ignore => None,
    }
}

fn check(logits: &LogitMatrix, sup: &SupervisionMatrix) -> Result<()> {
    if logits.shape() != sup.states.shape() {
        return Err(Error::ShapeMismatch {
            expected: sup.states.shape(),
            actual: logits.shape(),
        });
    }
    if let Some((row, col, _)) = logits.indexed().find(|(_, _, z)| !z.is_finite()) {
        return Err(Error::NonFiniteLogit { row, col });
    }
    Ok(())
}

fn supervised_count(sup: &SupervisionMatrix) -> usize {
    sup.states
        .as_slice()
        .iter()
        .filter(|s| **s != SupervisionState::Ignore)
        .count()
}

pub fn sigmoid_ce(
    logits: &LogitMatrix,
    sup: &SupervisionMatrix,
    reduction: Reduction,
) -> Result<LossOutput> {
    check(logits, sup)?;
    let mut per_entry = Matrix::filled(logits.rows(), logits.cols(), 0.0);
    let mut total = 0.0;
    let mut supervised = 0;
    for ((z, state), out) in logits
        .as_slice()
        .iter()
        .zip(sup.states.as_slice())
        .zip(per_entry.as_mut_slice())
    {
        if let Some(y) = target(*state) {
            let l = binary_ce(*z, y);
            *out = l;
            total += l;
            supervised += 1;
        }
    }
    if reduction == Reduction::MeanSupervised {
        total /= supervised.max(1) as f64;
    }
    Ok(LossOutput {
        total,
        per_entry,
        supervised_entries: supervised,
    })
}

/// Gradient of the reduced loss with respect to each logit.
pub fn sigmoid_ce_grad(
    logits: &LogitMatrix,
    sup: &SupervisionMatrix,
    reduction: Reduction,
) -> Result<Matrix<f64>> {
    check(logits, sup)?;
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::MeanSupervised => 1.0 / supervised_count(sup).max(1) as f64,
    };
    let data = logits
        .as_slice()
        .iter()
        .zip(sup.states.as_slice())
        .map(|(z, state)| match target(*state) {
            Some(y) => (sigmoid(*z) - y) * scale,
            None => 0.0,
        })
        .collect();
    Ok(Matrix::from_vec(logits.rows(), logits.cols(), data))
}
