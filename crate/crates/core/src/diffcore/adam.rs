use super::param::ParamStore;
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update over every trainable parameter, using the
/// gradients currently accumulated in the store. `step` counts from 1.
pub fn adam_step(params: &mut ParamStore, cfg: &AdamConfig, step: u64) -> Result<()> {
    ensure!(step >= 1, "adam step counter starts at 1, got {step}");
    ensure!(cfg.lr > 0.0, "learning rate must be positive, got {}", cfg.lr);
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for p in params.iter_mut().filter(|p| p.trainable) {
        let g = p.grad.data();
        let m = p.moment1.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = p.moment2.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (p.moment1.data(), p.moment2.data());
        for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            *w -= cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
