use serde::{Deserialize, Serialize};

use super::network::LayerParams;
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<LayerParams>,
    v: Vec<LayerParams>,
}

impl AdamState {
    pub fn new(params: &[LayerParams], lr: f64) -> Self {
        let zeros: Vec<LayerParams> = params.iter().map(LayerParams::zeros_like).collect();
        Self {
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [LayerParams], grads: &[LayerParams]) -> Result<()> {
        adam_step(params, grads, self)
    }
}

pub fn adam_step(params: &mut [LayerParams], grads: &[LayerParams], state: &mut AdamState) -> Result<()> {
    let same_layout = params.len() == grads.len()
        && params.len() == state.m.len()
        && params.iter().zip(grads).zip(&state.m).all(|((p, g), m)| {
            p.weights.len() == g.weights.len()
                && p.bias.len() == g.bias.len()
                && p.weights.len() == m.weights.len()
                && p.bias.len() == m.bias.len()
        });
    if !same_layout {
        return Err(Error::ShapeMismatch("parameters, gradients and Adam moments differ in layout".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let tensors = [
            (&mut p.weights, &g.weights, &mut m.weights, &mut v.weights),
            (&mut p.bias, &g.bias, &mut m.bias, &mut v.bias),
        ];
        for (p, g, m, v) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        }
    }
    Ok(())
}
