//! Sliding-window camera optimization against a reference clip.
//!
//! Each window holds two consecutive cameras (16 scalars). Every iteration
//! renders the window, runs the proxies and losses on the tape, masks the
//! backward pass to guidance-sampled pixels, balances the pose and flow
//! gradients, takes one Adam step and folds the pose increments back into
//! the base poses.

mod adam;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamMoments};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{CinematicParams, Trajectory, PARAMS_PER_CAMERA};
use crate::guidance::{color_gradient_guidance, min_max_normalize, sample_pixels_with, GuidanceMap, SamplingConfig};
use crate::losses::{
    flow_loss_on_tape, gradnorm_update, photometric_loss_on_tape, pose_loss_on_tape, LossWeights, OTConfig, PoseTarget,
};
use crate::proxies::{flow_on_tape, heatmaps_on_tape, FlowField, HeatmapConfig, ReferenceClip};
use crate::renderer::Renderer;

pub const WINDOW_PARAMS: usize = 2 * PARAMS_PER_CAMERA;

/// Which objective drives the cameras.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArm {
    /// Color error on uniformly sampled pixels.
    Photometric,
    /// Color error on pixels sampled around reference image edges.
    InerfStyle,
    Pose,
    Flow,
    #[serde(rename = "flow+pose")]
    FlowPose,
}

impl LossArm {
    pub const ALL: [LossArm; 5] = [LossArm::Photometric, LossArm::InerfStyle, LossArm::Pose, LossArm::Flow, LossArm::FlowPose];

    pub fn name(self) -> &'static str {
        match self {
            LossArm::Photometric => "photometric",
            LossArm::InerfStyle => "inerf-style",
            LossArm::Pose => "pose",
            LossArm::Flow => "flow",
            LossArm::FlowPose => "flow+pose",
        }
    }

    pub fn is_photometric(self) -> bool {
        matches!(self, LossArm::Photometric | LossArm::InerfStyle)
    }

    /// Starting weights for this arm; a zero weight disables its loss.
    pub fn weights(self, init: &LossWeights) -> LossWeights {
        match self {
            LossArm::Pose => LossWeights { beta: 0.0, ..*init },
            LossArm::Flow => LossWeights { alpha: 0.0, ..*init },
            _ => *init,
        }
    }
}

impl std::str::FromStr for LossArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossArm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid("arm", format!("unknown loss arm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub arm: LossArm,
    pub iters_per_window: usize,
    pub adam: AdamConfig,
    /// Stop when the objective improved by less than this fraction over
    /// the last `patience` iterations.
    pub stop_tol: f64,
    pub patience: usize,
    /// Gradient-carrying pixels per frame; `None` keeps every pixel.
    pub guidance_n: Option<usize>,
    pub sampling: SamplingConfig,
    pub ot: OTConfig,
    pub heatmap: HeatmapConfig,
    pub weights_init: LossWeights,
    /// Rebalance the pose and flow weights every iteration.
    pub gradnorm: bool,
    /// Learning-rate multiplier for the camera carried over from the
    /// previous window.
    pub held_lr_scale: f64,
    pub focal_range: [f64; 2],
    /// Take rotation steps about a point on the optical axis at the
    /// actor's depth instead of about the camera centre.
    pub orbit_pivot: bool,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            arm: LossArm::FlowPose,
            iters_per_window: 500,
            adam: AdamConfig::default(),
            stop_tol: 1e-4,
            patience: 50,
            guidance_n: Some(256),
            sampling: SamplingConfig::default(),
            ot: OTConfig::default(),
            heatmap: HeatmapConfig::default(),
            weights_init: LossWeights::default(),
            gradnorm: true,
            held_lr_scale: 0.1,
            focal_range: [1.0, 1e4],
            orbit_pivot: true,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.ot.validate()?;
        self.arm.weights(&self.weights_init).validate()?;
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop_tol", "must be nonnegative"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience", "must be at least 1"));
        }
        if self.guidance_n == Some(0) {
            return Err(Error::invalid("guidance_n", "must be at least 1"));
        }
        if !(self.held_lr_scale > 0.0) {
            return Err(Error::invalid("held_lr_scale", "must be positive"));
        }
        if !(self.focal_range[0] > 0.0 && self.focal_range[0] < self.focal_range[1]) {
            return Err(Error::invalid("focal_range", format!("{:?} is not an increasing positive range", self.focal_range)));
        }
        Ok(())
    }
}

/// One iteration's record, written as a JSON line by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub window: usize,
    pub iteration: usize,
    pub pose: f64,
    pub flow: f64,
    pub photometric: f64,
    /// Objective under the initial weights; used for stopping.
    pub objective: f64,
    pub alpha: f64,
    pub beta: f64,
    pub grad_norm_pose: f64,
    pub grad_norm_flow: f64,
    pub active_pixels: usize,
    /// Per camera: position (3), focal, time.
    pub cameras: [[f64; 5]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowState {
    pub params: [CinematicParams; 2],
    pub moments: AdamMoments,
    pub weights: LossWeights,
    pub iteration: usize,
    pub history: Vec<IterationLog>,
}

impl WindowState {
    pub fn new(params: [CinematicParams; 2], weights: LossWeights) -> Self {
        Self { params, moments: AdamMoments::new(WINDOW_PARAMS), weights, iteration: 0, history: Vec::new() }
    }

    /// Largest per-iteration count of pixels that received adjoints.
    pub fn peak_active_pixels(&self) -> usize {
        self.history.iter().map(|h| h.active_pixels).max().unwrap_or(0)
    }
}

/// Reference-side data for one clip, with the pose targets solved once per
/// frame and shared by the two windows that see each frame.
pub struct ClipTargets<'a> {
    pub clip: &'a ReferenceClip,
    targets: Vec<Arc<PoseTarget>>,
    edges: Vec<Option<GuidanceMap>>,
}

impl<'a> ClipTargets<'a> {
    pub fn new(clip: &'a ReferenceClip, cfg: &OptimConfig) -> Result<Self> {
        let targets = if cfg.arm.weights(&cfg.weights_init).alpha > 0.0 {
            clip.frames.iter().map(|f| PoseTarget::new(&f.heatmaps, &cfg.ot).map(Arc::new)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let edges = if cfg.arm == LossArm::InerfStyle {
            clip.frames.iter().map(|f| f.color.as_ref().map(color_gradient_guidance).transpose()).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self { clip, targets, edges })
    }
}

/// Values and per-loss gradients at one window configuration.
struct Evaluation {
    pose: f64,
    flow: f64,
    photometric: f64,
    grad_pose: [f64; WINDOW_PARAMS],
    grad_flow: [f64; WINDOW_PARAMS],
    grad_photometric: [f64; WINDOW_PARAMS],
    active_pixels: usize,
}

fn iteration_seed(seed: u64, window: usize, iteration: usize, frame: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((window as u64) << 33) ^ ((iteration as u64) << 1) ^ frame as u64);
    rng.gen()
}

fn add_normalized(acc: &mut Option<Vec<f64>>, x: Vec<f64>) {
    let x = min_max_normalize(&x);
    match acc {
        Some(a) => a.iter_mut().zip(x).for_each(|(p, q)| *p += q),
        None => *acc = Some(x),
    }
}

fn abs_diff_sum(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let c = *a.shape().last().unwrap();
    a.data().chunks(c).zip(b.data().chunks(c)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum()).collect()
}

fn to_array(t: &Tensor) -> [f64; PARAMS_PER_CAMERA] {
    let mut out = [0.0; PARAMS_PER_CAMERA];
    out.copy_from_slice(&t.data()[..PARAMS_PER_CAMERA]);
    out
}

fn join(a: &Tensor, b: &Tensor) -> [f64; WINDOW_PARAMS] {
    let mut out = [0.0; WINDOW_PARAMS];
    out[..PARAMS_PER_CAMERA].copy_from_slice(&to_array(a));
    out[PARAMS_PER_CAMERA..].copy_from_slice(&to_array(b));
    out
}

struct Window<'a, 'b> {
    renderer: &'a Renderer,
    targets: &'a ClipTargets<'b>,
    index: usize,
    cfg: &'a OptimConfig,
}

impl Window<'_, '_> {
    fn frames(&self) -> [&crate::proxies::ReferenceFrame; 2] {
        let f = &self.targets.clip.frames;
        [&f[self.index], &f[self.index + 1]]
    }

    fn reference_flow(&self) -> &FlowField {
        &self.targets.clip.flows[self.index]
    }

    fn sample(&self, guidance: Option<Vec<f64>>, iteration: usize, frame: usize) -> Result<Option<Vec<usize>>> {
        let res = self.renderer.resolution();
        let Some(n) = self.cfg.guidance_n.filter(|&n| n < res.pixels()) else { return Ok(None) };
        let map = match guidance {
            Some(d) => GuidanceMap::new(res, d)?,
            None => GuidanceMap::uniform(res),
        };
        let seed = iteration_seed(self.cfg.seed, self.index, iteration, frame);
        Ok(Some(sample_pixels_with(&map, n, seed, &self.cfg.sampling)?))
    }

    fn evaluate(&self, params: &[CinematicParams; 2], weights: &LossWeights, iteration: usize) -> Result<Evaluation> {
        if self.cfg.arm.is_photometric() {
            return self.evaluate_photometric(params, iteration);
        }
        let r = self.renderer;
        let frames = self.frames();
        let (use_pose, use_flow) = (weights.alpha > 0.0, weights.beta > 0.0);
        let mut tape = Tape::new();
        let p = [tape.leaf(Tensor::vector(params[0].packed().to_vec())), tape.leaf(Tensor::vector(params[1].packed().to_vec()))];
        let bases = [params[0].base, params[1].base];

        let mut nodes: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        let mut guidance: [Option<Vec<f64>>; 2] = [None, None];
        let mut pose_terms = Vec::new();
        if use_pose {
            for k in 0..2 {
                let h = heatmaps_on_tape(&mut tape, r, &self.cfg.heatmap, p[k], bases[k])?;
                nodes[k].push(h);
                add_normalized(&mut guidance[k], abs_diff_sum(&frames[k].heatmaps.data, tape.value(h)));
                pose_terms.push(pose_loss_on_tape(&mut tape, &self.targets.targets[self.index + k], h)?);
            }
        }
        let mut flow_var = None;
        if use_flow {
            let render = r.render_on_tape(&mut tape, p[0], bases[0])?;
            let flow = flow_on_tape(&mut tape, r, p, bases, render)?;
            nodes[0].extend([render, flow]);
            let reference = self.reference_flow();
            add_normalized(&mut guidance[0], abs_diff_sum(&reference.data, tape.value(flow)));
            flow_var = Some(flow_loss_on_tape(&mut tape, reference, flow)?);
        }
        let pose_var = match pose_terms.as_slice() {
            [a, b] => {
                let s = tape.add(*a, *b)?;
                Some(tape.scale(s, 0.5)?)
            }
            _ => None,
        };
        let [g0, g1] = guidance;
        for (k, g) in [g0, g1].into_iter().enumerate() {
            if nodes[k].is_empty() {
                continue;
            }
            if let Some(sampled) = self.sample(g, iteration, k)? {
                tape.apply_gradient_mask(&nodes[k], &sampled)?;
            }
        }

        let mut ev = Evaluation {
            pose: 0.0,
            flow: 0.0,
            photometric: 0.0,
            grad_pose: [0.0; WINDOW_PARAMS],
            grad_flow: [0.0; WINDOW_PARAMS],
            grad_photometric: [0.0; WINDOW_PARAMS],
            active_pixels: 0,
        };
        if let Some(v) = pose_var {
            ev.pose = tape.value(v).item();
            let (g, stats) = tape.grad_with_stats(v, &p)?;
            ev.grad_pose = join(&g[0], &g[1]);
            ev.active_pixels += stats.active_pixels;
        }
        if let Some(v) = flow_var {
            ev.flow = tape.value(v).item();
            let (g, stats) = tape.grad_with_stats(v, &p)?;
            ev.grad_flow = join(&g[0], &g[1]);
            ev.active_pixels += stats.active_pixels;
        }
        Ok(ev)
    }

    fn evaluate_photometric(&self, params: &[CinematicParams; 2], iteration: usize) -> Result<Evaluation> {
        let r = self.renderer;
        let res = r.resolution();
        let frames = self.frames();
        let mut tape = Tape::new();
        let p = [tape.leaf(Tensor::vector(params[0].packed().to_vec())), tape.leaf(Tensor::vector(params[1].packed().to_vec()))];
        let mut terms = Vec::new();
        for k in 0..2 {
            let color = frames[k]
                .color
                .as_ref()
                .ok_or_else(|| Error::invalid("reference", "photometric losses need reference colors"))?;
            let render = r.render_on_tape(&mut tape, p[k], params[k].base)?;
            let guidance = match self.cfg.arm {
                LossArm::InerfStyle => self.targets.edges[self.index + k].as_ref().map(|g| g.data.clone()),
                _ => None,
            };
            let sampled = self.sample(guidance.or_else(|| Some(vec![1.0; res.pixels()])), iteration, k)?;
            terms.push(photometric_loss_on_tape(&mut tape, color, render, sampled.as_deref())?);
        }
        let s = tape.add(terms[0], terms[1])?;
        let v = tape.scale(s, 0.5)?;
        let (g, stats) = tape.grad_with_stats(v, &p)?;
        Ok(Evaluation {
            pose: 0.0,
            flow: 0.0,
            photometric: tape.value(v).item(),
            grad_pose: [0.0; WINDOW_PARAMS],
            grad_flow: [0.0; WINDOW_PARAMS],
            grad_photometric: join(&g[0], &g[1]),
            active_pixels: stats.active_pixels,
        })
    }
}

fn camera_summary(p: &CinematicParams) -> [f64; 5] {
    let t = p.pose().translation;
    [t.x, t.y, t.z, p.focal, p.time]
}

/// Depth along the optical axis of the actor's joint centroid, or 0 when it
/// is behind the camera.
fn pivot_depth(renderer: &Renderer, p: &CinematicParams) -> f64 {
    let joints = renderer.scene().joints_3d(p.time);
    if joints.is_empty() {
        return 0.0;
    }
    let c = joints.iter().fold(nalgebra::Vector3::zeros(), |a, j| a + j) / joints.len() as f64;
    let pose = p.pose();
    let z = (pose.rotation.transpose() * (c - pose.translation)).z;
    z.max(0.0)
}

// Pivot coordinates (ω, τ) describe the increment T(p)·exp(ω, τ)·T(-p) with
// p = (0, 0, d), which equals exp(ω, τ + p × ω). Rotating about p keeps the
// actor roughly fixed in the image, so the weakly constrained orbit
// direction becomes a coordinate of its own.
fn pivot_gradient(g: &mut [f64], d: f64) {
    // ∂xi/∂ω adds [p]×; its transpose maps g_v to -p × g_v.
    let (gvx, gvy) = (g[3], g[4]);
    g[0] += d * gvy;
    g[1] -= d * gvx;
}

fn pivot_to_increment(x: &mut [f64], d: f64) {
    let (wx, wy) = (x[0], x[1]);
    x[3] -= d * wy;
    x[4] += d * wx;
}

fn scaled_norm(g: &[f64], lrs: &[f64]) -> f64 {
    g.iter().zip(lrs).map(|(a, b)| (a * b).powi(2)).sum::<f64>().sqrt()
}

/// Optimizes cameras `(window, window + 1)` of `targets.clip`.
///
/// With `hold_first`, the first camera was solved by the previous window and
/// moves at a reduced learning rate.
pub fn optimize_window(
    renderer: &Renderer,
    targets: &ClipTargets,
    window: usize,
    init: [CinematicParams; 2],
    hold_first: bool,
    cfg: &OptimConfig,
) -> Result<WindowState> {
    cfg.validate()?;
    let clip = targets.clip;
    if window + 1 >= clip.len() {
        return Err(Error::invalid("window", format!("window {window} needs frames {window} and {} of {}", window + 1, clip.len())));
    }
    if clip.resolution() != renderer.resolution() {
        return Err(Error::invalid("reference", "reference and render resolutions differ"));
    }
    if clip.joint_count() != renderer.scene().joint_count() {
        return Err(Error::invalid("reference", "reference and scene joint counts differ"));
    }
    for p in &init {
        p.validate()?;
    }
    let win = Window { renderer, targets, index: window, cfg };
    let weights0 = cfg.arm.weights(&cfg.weights_init);
    let mut state = WindowState::new(init.map(|p| p.reanchored()), weights0);
    let diameter = renderer.scene().diameter();
    let mut lrs = [0.0; WINDOW_PARAMS];
    for k in 0..2 {
        let mut l = cfg.adam.camera_lrs(diameter, init[k].focal);
        if k == 0 && hold_first {
            l.iter_mut().for_each(|v| *v *= cfg.held_lr_scale);
        }
        lrs[k * PARAMS_PER_CAMERA..][..PARAMS_PER_CAMERA].copy_from_slice(&l);
    }
    let mut initial_losses: Option<[f64; 2]> = None;

    for it in 0..cfg.iters_per_window {
        let ev = win.evaluate(&state.params, &state.weights, it)?;
        let objective = weights0.alpha * ev.pose + weights0.beta * ev.flow + ev.photometric;
        if !objective.is_finite() {
            return Err(Error::Optimization { iteration: it, reason: format!("non-finite loss in window {window}") });
        }
        let depths = if cfg.orbit_pivot {
            [pivot_depth(renderer, &state.params[0]), pivot_depth(renderer, &state.params[1])]
        } else {
            [0.0; 2]
        };
        let to_pivot = |g: &[f64]| {
            let mut out = [0.0; WINDOW_PARAMS];
            out.copy_from_slice(g);
            for k in 0..2 {
                pivot_gradient(&mut out[k * PARAMS_PER_CAMERA..][..6], depths[k]);
            }
            out
        };
        let (gp, gf, gph) = (to_pivot(&ev.grad_pose), to_pivot(&ev.grad_flow), to_pivot(&ev.grad_photometric));
        let (np, nf) = (scaled_norm(&gp, &lrs), scaled_norm(&gf, &lrs));
        let current = [ev.pose, ev.flow];
        let init_l = *initial_losses.get_or_insert(current);
        if cfg.gradnorm && state.weights.is_combined() && init_l[0] > 0.0 && init_l[1] > 0.0 {
            state.weights = gradnorm_update(&state.weights, np, nf, init_l, current)?;
        }
        state.history.push(IterationLog {
            window,
            iteration: it,
            pose: ev.pose,
            flow: ev.flow,
            photometric: ev.photometric,
            objective,
            alpha: state.weights.alpha,
            beta: state.weights.beta,
            grad_norm_pose: np,
            grad_norm_flow: nf,
            active_pixels: ev.active_pixels,
            cameras: [camera_summary(&state.params[0]), camera_summary(&state.params[1])],
        });
        if stalled(&state.history, cfg) {
            break;
        }

        let w = state.weights;
        let mut grad = [0.0; WINDOW_PARAMS];
        for i in 0..WINDOW_PARAMS {
            grad[i] = w.alpha * gp[i] + w.beta * gf[i] + gph[i];
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Optimization { iteration: it, reason: "non-finite gradient".into() });
        }
        let mut x = [0.0; WINDOW_PARAMS];
        x[..PARAMS_PER_CAMERA].copy_from_slice(&state.params[0].packed());
        x[PARAMS_PER_CAMERA..].copy_from_slice(&state.params[1].packed());
        let decay = cfg.adam.decay(it, cfg.iters_per_window);
        let step_lrs = lrs.map(|l| l * decay);
        adam_step(&mut x, &grad, &mut state.moments, &step_lrs, &cfg.adam, cfg.focal_range)?;
        for k in 0..2 {
            pivot_to_increment(&mut x[k * PARAMS_PER_CAMERA..][..6], depths[k]);
            let next = state.params[k].with_packed(&x[k * PARAMS_PER_CAMERA..]).reanchored();
            let c = next.base.translation;
            if !renderer.scene().contains(&c) {
                return Err(Error::OutOfBounds { position: [c.x, c.y, c.z] });
            }
            state.params[k] = next;
        }
        state.iteration = it + 1;
    }
    Ok(state)
}

/// Objective of window `window` at `params` under the arm's initial weights,
/// with its gradient over the packed parameters of both cameras. Every pixel
/// carries gradient, so the result is the exact derivative of the value.
pub fn window_objective(
    renderer: &Renderer,
    targets: &ClipTargets,
    window: usize,
    params: &[CinematicParams; 2],
    cfg: &OptimConfig,
) -> Result<(f64, [f64; WINDOW_PARAMS])> {
    cfg.validate()?;
    if window + 1 >= targets.clip.len() {
        return Err(Error::invalid("window", format!("window {window} is past the clip end")));
    }
    let cfg = OptimConfig { guidance_n: None, ..cfg.clone() };
    let win = Window { renderer, targets, index: window, cfg: &cfg };
    let w = cfg.arm.weights(&cfg.weights_init);
    let ev = win.evaluate(params, &w, 0)?;
    let mut grad = [0.0; WINDOW_PARAMS];
    for i in 0..WINDOW_PARAMS {
        grad[i] = w.alpha * ev.grad_pose[i] + w.beta * ev.grad_flow[i] + ev.grad_photometric[i];
    }
    Ok((w.alpha * ev.pose + w.beta * ev.flow + ev.photometric, grad))
}

/// True once the best objective of the last `patience` iterations improves
/// on the best before them by less than `stop_tol` (relative).
fn stalled(history: &[IterationLog], cfg: &OptimConfig) -> bool {
    let n = history.len();
    if n <= cfg.patience {
        return false;
    }
    let best = |h: &[IterationLog]| h.iter().map(|l| l.objective).fold(f64::INFINITY, f64::min);
    let before = best(&history[..n - cfg.patience]);
    let recent = best(&history[n - cfg.patience..]);
    (before - recent) <= cfg.stop_tol * before.abs()
}

/// Result of a whole-clip transfer.
#[derive(Debug, Clone)]
pub struct ClipResult {
    pub trajectory: Trajectory,
    pub windows: Vec<WindowState>,
}

impl ClipResult {
    pub fn iterations(&self) -> usize {
        self.windows.iter().map(|w| w.iteration).sum()
    }

    pub fn peak_active_pixels(&self) -> usize {
        self.windows.iter().map(|w| w.peak_active_pixels()).max().unwrap_or(0)
    }

    pub fn logs(&self) -> impl Iterator<Item = &IterationLog> {
        self.windows.iter().flat_map(|w| &w.history)
    }
}

/// Chains windows `(k, k + 1)` over the clip. Camera `k + 1` starts from
/// camera `k`; camera `k` is warm-started from the previous window.
pub fn transfer_clip(reference: &ReferenceClip, renderer: &Renderer, init: CinematicParams, cfg: &OptimConfig) -> Result<ClipResult> {
    if reference.len() < 2 {
        return Err(Error::invalid("reference", "need at least two frames"));
    }
    cfg.validate()?;
    let targets = ClipTargets::new(reference, cfg)?;
    let mut solved: Vec<CinematicParams> = Vec::with_capacity(reference.len());
    let mut windows = Vec::with_capacity(reference.len() - 1);
    let mut current = init;
    for k in 0..reference.len() - 1 {
        let next_init = CinematicParams { xi: [0.0; 6], ..current };
        let state = optimize_window(renderer, &targets, k, [current, next_init], k > 0, cfg).map_err(|e| Error::Transfer {
            window: k,
            partial: solved.clone(),
            source: Box::new(e),
        })?;
        solved.push(state.params[0]);
        current = state.params[1];
        windows.push(state);
    }
    solved.push(current);
    Ok(ClipResult { trajectory: Trajectory::from_params(solved), windows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Resolution, SE3Pose};
    use crate::proxies::make_reference;
    use crate::testutil::{front_view, preset_renderer};
    use nalgebra::Vector3;

    #[test]
    fn pivot_coordinates_conjugate_the_increment() {
        let d = 2.7;
        let y = [0.03, -0.05, 0.02, 0.1, -0.2, 0.05];
        let shift = SE3Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.0, 0.0, d));
        let expect = shift.compose(&crate::geometry::se3_exp(&y)).compose(&shift.inverse());
        let mut xi = y;
        pivot_to_increment(&mut xi, d);
        let got = crate::geometry::se3_exp(&xi);
        assert!((got.rotation - expect.rotation).norm() < 1e-12);
        assert!((got.translation - expect.translation).norm() < 1e-12);
    }

    #[test]
    fn pivot_gradient_is_the_chain_rule() {
        // f(xi) = c · xi, so ∂f/∂y = J^T c where xi = J y.
        let (d, c) = (1.9, [0.3, -0.7, 0.2, 1.1, -0.4, 0.9]);
        let f = |y: &[f64; 6]| {
            let mut xi = *y;
            pivot_to_increment(&mut xi, d);
            xi.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = c;
        pivot_gradient(&mut g, d);
        for i in 0..6 {
            let mut e = [0.0; 6];
            e[i] = 1.0;
            assert!((f(&e) - g[i]).abs() < 1e-12, "component {i}");
        }
    }

    fn small_cfg(iters: usize) -> OptimConfig {
        OptimConfig { iters_per_window: iters, ot: OTConfig { grid: [8, 8], ..Default::default() }, guidance_n: Some(64), ..Default::default() }
    }

    fn clip(n: usize, res: Resolution) -> (Renderer, Trajectory, ReferenceClip) {
        let r = preset_renderer("scene_a", res);
        let params: Vec<_> = (0..n)
            .map(|i| {
                let mut p = front_view(20.0, 0.2 + 0.1 * i as f64);
                p.base = p.base.compose(&SE3Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.05 * i as f64, 0.0, 0.0)));
                p
            })
            .collect();
        let traj = Trajectory::from_params(params);
        let reference = make_reference(&traj, &r, &HeatmapConfig::default()).unwrap();
        (r, traj, reference)
    }

    #[test]
    fn zero_iterations_return_init() {
        let (r, traj, reference) = clip(2, Resolution::new(16, 16));
        let cfg = small_cfg(0);
        let targets = ClipTargets::new(&reference, &cfg).unwrap();
        let init: Vec<_> = traj.params().copied().collect();
        let s = optimize_window(&r, &targets, 0, [init[0], init[1]], false, &cfg).unwrap();
        assert_eq!(s.params, [init[0].reanchored(), init[1].reanchored()]);
        assert!(s.history.is_empty());
    }

    #[test]
    fn two_frames_make_one_window_and_runs_repeat_exactly() {
        let (r, traj, reference) = clip(2, Resolution::new(16, 16));
        let cfg = small_cfg(3);
        let init = traj.params().next().copied().unwrap();
        let a = transfer_clip(&reference, &r, init, &cfg).unwrap();
        assert_eq!(a.windows.len(), 1);
        assert_eq!(a.trajectory.len(), 2);
        let b = transfer_clip(&reference, &r, init, &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.windows[0].history, b.windows[0].history);
    }

    #[test]
    fn every_arm_takes_steps() {
        let (r, traj, reference) = clip(2, Resolution::new(16, 16));
        let init = traj.params().next().copied().unwrap();
        for arm in LossArm::ALL {
            let cfg = OptimConfig { arm, ..small_cfg(2) };
            let res = transfer_clip(&reference, &r, init, &cfg).unwrap();
            let h = &res.windows[0].history;
            assert_eq!(h.len(), 2, "{}", arm.name());
            assert!(h[0].objective.is_finite() && h[0].objective > 0.0, "{}: {:?}", arm.name(), h[0]);
            if arm == LossArm::Pose {
                assert_eq!(h[0].flow, 0.0);
            }
        }
    }

    #[test]
    fn failed_window_carries_partial_trajectory() {
        let (r, traj, reference) = clip(3, Resolution::new(16, 16));
        let init = traj.params().next().copied().unwrap();
        // A learning rate large enough to throw the camera out of the scene.
        let cfg = OptimConfig { adam: AdamConfig { lr_translation: 10.0, ..Default::default() }, ..small_cfg(5) };
        match transfer_clip(&reference, &r, init, &cfg) {
            Err(Error::Transfer { window, partial, .. }) => assert_eq!(partial.len(), window),
            other => panic!("expected a transfer error, got {other:?}"),
        }
    }

    #[test]
    fn arm_names_round_trip() {
        for a in LossArm::ALL {
            assert_eq!(a.name().parse::<LossArm>().unwrap(), a);
        }
        assert!("bogus".parse::<LossArm>().is_err());
    }
}
