//! SGD with momentum, coupled weight decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    pub buffers: Vec<Vec<f64>>,
    pub step: u64,
}

impl SgdState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            buffers: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

pub fn global_norm(grads: &[&[f64]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scale factor that brings a gradient of norm `norm` within `clip_norm`.
pub fn clip_factor(norm: f64, clip_norm: f64) -> f64 {
    if clip_norm > 0.0 && norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    }
}

/// Rescales `grads` in place so their global norm is at most `clip_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], clip_norm: f64) -> f64 {
    let norm = global_norm(&grads.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let s = clip_factor(norm, clip_norm);
    if s != 1.0 {
        for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *g *= s;
        }
    }
    norm
}

/// One update: clip, `v ← μ v + (g + wd·θ)`, `θ ← θ − lr·v`. Returns the pre-clip gradient norm.
pub fn sgd_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut SgdState,
    cfg: &SgdConfig,
) -> Result<f64> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Argument(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if params.len() != grads.len() || params.len() != state.buffers.len() {
        return shape_err("parameter, gradient and buffer counts differ");
    }
    for ((p, g), b) in params.iter().zip(grads).zip(&state.buffers) {
        if p.len() != g.len() || p.len() != b.len() {
            return shape_err("parameter, gradient and buffer lengths differ");
        }
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm {norm} at update {}", state.step)));
    }
    let s = clip_factor(norm, cfg.clip_norm);
    for ((p, g), buf) in params.iter_mut().zip(grads).zip(state.buffers.iter_mut()) {
        for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(buf.iter_mut()) {
            *vi = cfg.momentum * *vi + (s * gi + cfg.weight_decay * *pi);
            *pi -= cfg.lr * *vi;
        }
    }
    state.step += 1;
    Ok(norm)
}
