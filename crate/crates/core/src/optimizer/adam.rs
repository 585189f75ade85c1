use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PARAMS_PER_CAMERA;

/// Adam hyperparameters with one learning rate per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    /// Radians per step.
    pub lr_rotation: f64,
    /// Fraction of the scene diameter per step.
    pub lr_translation: f64,
    /// Fraction of the initial focal length per step.
    pub lr_focal: f64,
    pub lr_time: f64,
    /// Learning rates decay geometrically to this fraction of their start
    /// value over one window's iteration budget; 1 disables the decay.
    pub lr_final_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr_rotation: 1e-2, lr_translation: 1e-2, lr_focal: 1e-2, lr_time: 1e-2, lr_final_fraction: 1.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("adam.lr_rotation", self.lr_rotation),
            ("adam.lr_translation", self.lr_translation),
            ("adam.lr_focal", self.lr_focal),
            ("adam.lr_time", self.lr_time),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {lr}")));
            }
        }
        for (name, b) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::OutOfRange { what: if name.ends_with('1') { "beta1" } else { "beta2" }, value: b, lo: 0.0, hi: 1.0 });
            }
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::OutOfRange { what: "lr_final_fraction", value: self.lr_final_fraction, lo: 0.0, hi: 1.0 });
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("adam.eps", "must be positive"));
        }
        Ok(())
    }

    /// Learning-rate multiplier at `iteration` of a `budget`-iteration window.
    pub fn decay(&self, iteration: usize, budget: usize) -> f64 {
        if budget <= 1 {
            return 1.0;
        }
        self.lr_final_fraction.powf(iteration as f64 / (budget - 1) as f64)
    }

    /// Absolute step sizes for one camera's `[xi(6), focal, time]`.
    pub fn camera_lrs(&self, diameter: f64, focal_init: f64) -> [f64; PARAMS_PER_CAMERA] {
        let (r, t) = (self.lr_rotation, self.lr_translation * diameter);
        [r, r, r, t, t, t, self.lr_focal * focal_init, self.lr_time]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u32,
}

impl AdamMoments {
    pub fn new(n: usize) -> Self {
        Self { first: vec![0.0; n], second: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update, then projection of every camera block:
/// focal into `focal_range`, time into `[0, 1]`.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut AdamMoments, lrs: &[f64], cfg: &AdamConfig, focal_range: [f64; 2]) -> Result<()> {
    let n = params.len();
    if grads.len() != n || lrs.len() != n || moments.first.len() != n || moments.second.len() != n {
        return Err(Error::Shape { op: "adam_step", shapes: vec![vec![n], vec![grads.len()], vec![lrs.len()], vec![moments.first.len()]] });
    }
    moments.step += 1;
    let t = moments.step as i32;
    let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
    for i in 0..n {
        let g = grads[i];
        moments.first[i] = cfg.beta1 * moments.first[i] + (1.0 - cfg.beta1) * g;
        moments.second[i] = cfg.beta2 * moments.second[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = moments.first[i] / c1;
        let v_hat = moments.second[i] / c2;
        params[i] -= lrs[i] * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    for block in params.chunks_mut(PARAMS_PER_CAMERA) {
        if block.len() == PARAMS_PER_CAMERA {
            block[6] = block[6].clamp(focal_range[0], focal_range[1]);
            block[7] = block[7].clamp(0.0, 1.0);
        }
    }
    Ok(())
}
