//! Losses: on-screen pose transport, inter-frame flow endpoint error, the
//! photometric baseline, and the pose/flow weight balancing rule.

mod pose;
mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use pose::{inter_joint_matrix, pose_loss, pose_loss_on_tape, sinkhorn_wdist, PoseTarget};
pub use sinkhorn::{sinkhorn_histograms, OTConfig};

use crate::diffcore::{OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::proxies::FlowField;

pub const WEIGHT_MIN: f64 = 1e-3;
pub const WEIGHT_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Exponent on the relative inverse training rate when balancing.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 0.5 }
    }
}

impl LossWeights {
    pub fn pose_only() -> Self {
        Self { beta: 0.0, ..Self::default() }
    }

    pub fn flow_only() -> Self {
        Self { alpha: 0.0, ..Self::default() }
    }

    /// A zero weight switches its loss off; at least one must be on.
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("weights.alpha", self.alpha), ("weights.beta", self.beta)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and nonnegative, got {w}")));
            }
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::invalid("weights", "alpha and beta cannot both be zero"));
        }
        if !self.gamma.is_finite() {
            return Err(Error::invalid("weights.gamma", "must be finite"));
        }
        Ok(())
    }

    /// Both losses active, so balancing applies.
    pub fn is_combined(&self) -> bool {
        self.alpha > 0.0 && self.beta > 0.0
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { op, shapes: vec![a.shape().to_vec(), b.shape().to_vec()] });
    }
    Ok(())
}

/// Mean endpoint error between two flow fields.
pub fn flow_loss(reference: &FlowField, synthesized: &FlowField) -> Result<f64> {
    same_shape("flow_loss", &reference.data, &synthesized.data)?;
    let d = reference.data.data();
    let s = synthesized.data.data();
    let n = reference.resolution.pixels();
    let total: f64 = d.chunks(2).zip(s.chunks(2)).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).sum();
    Ok(total / n as f64)
}

pub fn flow_loss_on_tape(tape: &mut Tape, reference: &FlowField, synthesized: Var) -> Result<Var> {
    same_shape("flow_loss", &reference.data, tape.value(synthesized))?;
    let r = tape.leaf(reference.data.clone());
    let d = tape.sub(synthesized, r)?;
    let n = tape.record(OpKind::NormLast, &[d])?;
    tape.mean(n)
}

/// Mean squared color error over `[H, W, 3]` images, averaged over pixels
/// and channels.
pub fn photometric_loss(reference: &Tensor, synthesized: &Tensor) -> Result<f64> {
    same_shape("photometric_loss", reference, synthesized)?;
    let n = reference.len().max(1) as f64;
    let se: f64 = reference.data().iter().zip(synthesized.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(se / n)
}

/// Photometric loss against the color channels of a packed `[H, W, C]`
/// render node, restricted to `pixels` when given.
pub fn photometric_loss_on_tape(tape: &mut Tape, reference: &Tensor, render: Var, pixels: Option<&[usize]>) -> Result<Var> {
    let shape = tape.value(render).shape().to_vec();
    if shape.len() != 3 || shape[2] < 3 || reference.shape() != [shape[0], shape[1], 3] {
        return Err(Error::Shape { op: "photometric_loss", shapes: vec![reference.shape().to_vec(), shape] });
    }
    let all: Vec<usize>;
    let px = match pixels {
        Some(p) => p,
        None => {
            all = (0..shape[0] * shape[1]).collect();
            &all
        }
    };
    let c = shape[2];
    let idx: Vec<usize> = px.iter().flat_map(|p| (0..3).map(move |k| p * c + k)).collect();
    let ref_vals: Vec<f64> = px.iter().flat_map(|p| (0..3).map(move |k| reference.data()[p * 3 + k])).collect();
    let g = tape.record(OpKind::Gather(idx), &[render])?;
    let r = tape.leaf(Tensor::vector(ref_vals));
    let d = tape.sub(g, r)?;
    let sq = tape.record(OpKind::Square, &[d])?;
    tape.mean(sq)
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// `α · mean(pose) + β · mean(flow)`.
pub fn total_loss(pose_terms: &[f64], flow_terms: &[f64], weights: &LossWeights) -> f64 {
    weights.alpha * mean(pose_terms) + weights.beta * mean(flow_terms)
}

/// Simplified GradNorm step on the pose and flow weights.
///
/// Each loss gets a target gradient norm equal to the mean weighted norm
/// times its relative inverse training rate raised to `γ`; weights move to
/// hit their targets, then are rescaled to sum to 2 and clamped.
pub fn gradnorm_update(
    weights: &LossWeights,
    grad_norm_pose: f64,
    grad_norm_flow: f64,
    initial_losses: [f64; 2],
    current_losses: [f64; 2],
) -> Result<LossWeights> {
    if !(grad_norm_pose >= 0.0 && grad_norm_flow >= 0.0) {
        return Err(Error::invalid("gradnorm", "gradient norms must be nonnegative"));
    }
    if !(initial_losses[0] > 0.0 && initial_losses[1] > 0.0) {
        return Err(Error::invalid("gradnorm", "initial losses must be positive"));
    }
    if grad_norm_pose == 0.0 && grad_norm_flow == 0.0 {
        return Ok(*weights);
    }
    let w = [weights.alpha, weights.beta];
    let g = [w[0] * grad_norm_pose, w[1] * grad_norm_flow];
    let g_mean = 0.5 * (g[0] + g[1]);
    let rate = [current_losses[0] / initial_losses[0], current_losses[1] / initial_losses[1]];
    let rate_mean = 0.5 * (rate[0] + rate[1]);
    let mut next = [0.0; 2];
    for i in 0..2 {
        let r = if rate_mean > 0.0 { rate[i] / rate_mean } else { 1.0 };
        let target = g_mean * r.max(0.0).powf(weights.gamma);
        next[i] = if g[i] > 0.0 { w[i] * target / g[i] } else { w[i] };
    }
    let s = next[0] + next[1];
    let next = next.map(|v| (2.0 * v / s).clamp(WEIGHT_MIN, WEIGHT_MAX));
    Ok(LossWeights { alpha: next[0], beta: next[1], gamma: weights.gamma })
}
