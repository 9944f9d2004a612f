//! FGSM perturbation of token embeddings and the mixed clean/adversarial
//! objective `alpha * J(x) + (1 - alpha) * J(x + delta)`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{backward, forward, Gradients, Matrix, Parameters};
use crate::tokenizer::EncodedText;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Perturb in every epoch.
    Always,
    /// Perturb in even-numbered epochs; epoch 1 is clean.
    #[default]
    Alternate,
    Never,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Always => "always",
            Schedule::Alternate => "alternate",
            Schedule::Never => "never",
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always" => Ok(Schedule::Always),
            "alternate" => Ok(Schedule::Alternate),
            "never" => Ok(Schedule::Never),
            other => Err(Error::invalid(format!("unknown FGSM schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub schedule: Schedule,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            alpha: DEFAULT_ALPHA,
            schedule: Schedule::Alternate,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Epochs are numbered from 1.
pub fn should_perturb(epoch: usize, schedule: Schedule) -> Result<bool> {
    if epoch < 1 {
        return Err(Error::invalid("epochs are numbered from 1"));
    }
    Ok(match schedule {
        Schedule::Always => true,
        Schedule::Never => false,
        Schedule::Alternate => epoch.is_multiple_of(2),
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `delta[i][j] = epsilon * sign(grad[i][j])` on real tokens, zero on PAD
/// rows, with `sign(0) = 0`.
pub fn fgsm_delta(d_embedded: &Matrix, mask: &[bool], epsilon: f64) -> Result<Matrix> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if mask.len() != d_embedded.rows() {
        return Err(Error::Shape(format!(
            "mask has {} entries for {} gradient rows",
            mask.len(),
            d_embedded.rows()
        )));
    }
    let mut delta = Matrix::zeros(d_embedded.rows(), d_embedded.cols());
    if epsilon == 0.0 {
        return Ok(delta);
    }
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (o, &g) in delta.row_mut(i).iter_mut().zip(d_embedded.row(i)) {
            *o = epsilon * sign(g);
        }
    }
    Ok(delta)
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `alpha * clean_loss + (1 - alpha) * adv_loss`
    pub loss: f64,
    pub clean_loss: f64,
    pub adv_loss: f64,
    pub grads: Gradients,
    pub delta: Matrix,
}

/// Loss and gradients of one clean forward/backward pass.
pub fn clean_step(params: &Parameters, input: &EncodedText, label: usize) -> Result<(f64, Gradients)> {
    let (logits, cache) = forward(params, input, None)?;
    let j = crate::model::loss(&logits, label);
    let g = backward(params, &cache, label)?;
    Ok((j, g))
}

/// One FGSM step. The perturbation is built from the clean input gradient
/// and held constant (no gradient flows through it).
///
/// When the perturbation is identically zero or `alpha == 1` the clean result
/// is returned as is, so those settings are bit-identical to plain training.
pub fn combined_step(params: &Parameters, input: &EncodedText, label: usize, adv: &AdvConfig) -> Result<StepOutput> {
    adv.validate()?;
    let (clean_loss, clean) = clean_step(params, input, label)?;
    let delta = fgsm_delta(&clean.d_embedded, &input.mask, adv.epsilon)?;
    if adv.alpha == 1.0 || delta.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(StepOutput {
            loss: clean_loss,
            clean_loss,
            adv_loss: clean_loss,
            grads: clean,
            delta,
        });
    }
    let (logits, cache) = forward(params, input, Some(&delta))?;
    let adv_loss = crate::model::loss(&logits, label);
    let adv_grads = backward(params, &cache, label)?;
    let a = adv.alpha;
    Ok(StepOutput {
        loss: a * clean_loss + (1.0 - a) * adv_loss,
        clean_loss,
        adv_loss,
        grads: clean.mix(a, &adv_grads, 1.0 - a),
        delta,
    })
}
