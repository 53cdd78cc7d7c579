//! Softmax, cross-entropy and focal loss over soft label vectors.
//!
//! Every loss is a sum of per-class terms
//! `-w_i * alpha * (1 - p_i)^gamma * ln(p_i) * y_i`, where cross-entropy is
//! the `alpha = 1, gamma = 0` case and `w_i` are the optional class weights
//! (1 when absent). Labels are plain slices so any encoding, including the
//! degenerate all-zero vector, can be scored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-12;

/// Softmax output, clamped away from 0 and 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Probabilities(Vec<f64>);

impl Probabilities {
    /// Wraps raw probabilities, clamping them into the open unit interval.
    pub fn from_raw(p: &[f64]) -> Self {
        Self(p.iter().map(|v| v.clamp(PROB_EPS, 1.0 - PROB_EPS)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn softmax(z: &[f64]) -> Probabilities {
    Probabilities::from_raw(&softmax_raw(z))
}

fn softmax_raw(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LossKind {
    Cce,
    Focal { alpha: f64, gamma: f64 },
}

impl LossKind {
    /// `(alpha, gamma)` of the equivalent focal loss; cross-entropy is `(1, 0)`.
    pub fn focal_params(self) -> (f64, f64) {
        match self {
            LossKind::Cce => (1.0, 0.0),
            LossKind::Focal { alpha, gamma } => (alpha, gamma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
}

impl LossConfig {
    pub fn cce() -> Self {
        Self {
            kind: LossKind::Cce,
            class_weights: None,
        }
    }

    pub fn focal(alpha: f64, gamma: f64) -> Self {
        Self {
            kind: LossKind::Focal { alpha, gamma },
            class_weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.class_weights = Some(weights);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let LossKind::Focal { alpha, gamma } = self.kind {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::InvalidLossConfig(format!("alpha {alpha} outside [0, 1]")));
            }
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidLossConfig(format!("gamma {gamma} must be >= 0")));
            }
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidLossConfig("class weights must be positive".into()));
            }
        }
        Ok(())
    }

    fn weight(&self, class: usize) -> f64 {
        self.class_weights.as_ref().map_or(1.0, |w| w[class])
    }
}

pub fn cross_entropy(p: &Probabilities, y: &[f64]) -> f64 {
    -p.as_slice()
        .iter()
        .zip(y)
        .map(|(p, y)| p.ln() * y)
        .sum::<f64>()
}

pub fn focal_loss(p: &Probabilities, y: &[f64], alpha: f64, gamma: f64) -> f64 {
    -p.as_slice()
        .iter()
        .zip(y)
        .map(|(p, y)| alpha * (1.0 - p).powf(gamma) * p.ln() * y)
        .sum::<f64>()
}

/// Balanced class weights `n / (l * n_j)`.
pub fn class_weights(counts: &[u64]) -> Result<Vec<f64>> {
    if let Some(empty) = counts.iter().position(|c| *c == 0) {
        return Err(Error::EmptyClass(empty));
    }
    let n: u64 = counts.iter().sum();
    let l = counts.len() as f64;
    Ok(counts.iter().map(|c| n as f64 / (l * *c as f64)).collect())
}

/// The configured loss with each class term scaled by its weight.
pub fn apply_class_weights(p: &Probabilities, y: &[f64], config: &LossConfig) -> f64 {
    let (alpha, gamma) = config.kind.focal_params();
    -p.as_slice()
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (p, y))| config.weight(i) * alpha * (1.0 - p).powf(gamma) * p.ln() * y)
        .sum::<f64>()
}

/// Loss of one sample given its logits.
pub fn sample_loss(z: &[f64], y: &[f64], config: &LossConfig) -> f64 {
    apply_class_weights(&softmax(z), y, config)
}

/// Gradient of [`sample_loss`] with respect to the logits.
pub fn loss_gradient(z: &[f64], y: &[f64], config: &LossConfig) -> Vec<f64> {
    let p = softmax(z);
    let p = p.as_slice();
    let (alpha, gamma) = config.kind.focal_params();
    // dL/dp_i for each class term.
    let dp: Vec<f64> = p
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (&p, &y))| {
            if y == 0.0 {
                return 0.0;
            }
            let c = config.weight(i) * alpha * y;
            let q = 1.0 - p;
            let focus = if gamma == 0.0 {
                0.0
            } else {
                gamma * q.powf(gamma - 1.0) * p.ln()
            };
            c * (focus - q.powf(gamma) / p)
        })
        .collect();
    // Softmax Jacobian: dL/dz_k = p_k * (dL/dp_k - sum_i dL/dp_i * p_i).
    let inner: f64 = dp.iter().zip(p).map(|(g, p)| g * p).sum();
    dp.iter().zip(p).map(|(g, p)| p * (g - inner)).collect()
}

/// Mean of the per-sample losses.
pub fn batch_loss<Z, Y>(logits: &[Z], labels: &[Y], config: &LossConfig) -> Result<f64>
where
    Z: AsRef<[f64]>,
    Y: AsRef<[f64]>,
{
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: logits.len(),
            right: labels.len(),
        });
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, y)| sample_loss(z.as_ref(), y.as_ref(), config))
        .sum();
    Ok(total / logits.len() as f64)
}
