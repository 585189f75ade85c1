//! Joint-confidence heatmaps: one truncated Gaussian splat per joint at its
//! projection, scaled by the static-scene transmittance to the joint.

use serde::{Deserialize, Serialize};

use crate::diffcore::{BackwardStats, CustomOp, Jet, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Camera, CinematicParams, Resolution, SE3Pose, PARAMS_PER_CAMERA};
use crate::renderer::Renderer;

/// Splat radius in standard deviations; the kernel reaches zero there.
const SPLAT_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapConfig {
    /// Splat standard deviation in pixels; `None` means 2% of the image diagonal.
    pub sigma_px: Option<f64>,
    /// Scale each splat by the transmittance from the camera to the joint.
    pub occlusion: bool,
    /// Midpoint samples for that transmittance.
    pub occlusion_samples: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self { sigma_px: None, occlusion: true, occlusion_samples: 64 }
    }
}

impl HeatmapConfig {
    pub fn sigma_for(&self, resolution: Resolution) -> f64 {
        self.sigma_px.unwrap_or(0.02 * resolution.diagonal())
    }
}

/// `[H, W, J]` nonnegative joint confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub resolution: Resolution,
    pub sigma_px: f64,
    pub data: Tensor,
}

impl HeatmapStack {
    pub fn new(resolution: Resolution, sigma_px: f64, data: Tensor) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s[0] != resolution.height || s[1] != resolution.width {
            return Err(Error::Shape { op: "heatmap_stack", shapes: vec![s.to_vec()] });
        }
        if data.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite("heatmap values must be finite and nonnegative".into()));
        }
        Ok(Self { resolution, sigma_px, data })
    }

    pub fn joint_count(&self) -> usize {
        self.data.shape()[2]
    }

    /// Row-major `H × W` plane of joint `j`.
    pub fn channel(&self, j: usize) -> Vec<f64> {
        let jc = self.joint_count();
        self.data.data().iter().skip(j).step_by(jc).copied().collect()
    }
}

/// Truncated Gaussian kernel, 1 at the center and 0 at `SPLAT_RADIUS · σ`,
/// with its derivative with respect to the squared distance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Splat {
    inv_two_var: f64,
    floor: f64,
    norm: f64,
    reach2: f64,
    pub(crate) reach: f64,
}

impl Splat {
    pub(crate) fn new(sigma: f64) -> Self {
        let inv_two_var = 1.0 / (2.0 * sigma * sigma);
        let reach = SPLAT_RADIUS * sigma;
        let floor = (-reach * reach * inv_two_var).exp();
        Self { inv_two_var, floor, norm: 1.0 / (1.0 - floor), reach2: reach * reach, reach }
    }

    /// `(k(r²), dk/d(r²))`
    #[inline]
    pub(crate) fn eval(&self, r2: f64) -> (f64, f64) {
        if r2 >= self.reach2 {
            return (0.0, 0.0);
        }
        let e = (-r2 * self.inv_two_var).exp();
        ((e - self.floor) * self.norm, -self.inv_two_var * e * self.norm)
    }
}

/// Projection and amplitude of every joint: `None` for joints behind the camera.
pub(crate) fn joint_splats<T: Real>(
    renderer: &Renderer,
    cfg: &HeatmapConfig,
    base: &SE3Pose,
    packed: &[T; PARAMS_PER_CAMERA],
) -> Vec<Option<([T; 2], T)>> {
    let cam = Camera::from_packed(base, packed, renderer.resolution());
    renderer
        .scene()
        .joints_at(packed[7])
        .into_iter()
        .map(|x| {
            let uv = cam.project(x)?;
            let amp = if cfg.occlusion {
                renderer.background_transmittance(cam.center, x, cfg.occlusion_samples)
            } else {
                T::one()
            };
            Some((uv, amp))
        })
        .collect()
}

fn packed_of(t: &Tensor) -> Result<[f64; PARAMS_PER_CAMERA]> {
    t.data()
        .try_into()
        .map_err(|_| Error::Shape { op: "heatmaps", shapes: vec![t.shape().to_vec(), vec![PARAMS_PER_CAMERA]] })
}

/// Pixel window `[lo, hi)` touched by a splat centered at `c` along an axis of length `n`.
fn span(c: f64, reach: f64, n: usize) -> (usize, usize) {
    let lo = (c - reach - 0.5).floor().max(0.0) as usize;
    let hi = ((c + reach - 0.5).ceil() + 1.0).clamp(0.0, n as f64) as usize;
    (lo.min(n), hi)
}

pub(crate) fn splat_tensor(resolution: Resolution, sigma: f64, splats: &[Option<([f64; 2], f64)>]) -> Result<Tensor> {
    let (h, w, jc) = (resolution.height, resolution.width, splats.len());
    let k = Splat::new(sigma);
    let mut data = vec![0.0; h * w * jc];
    for (j, s) in splats.iter().enumerate() {
        let Some(([u, v], a)) = *s else { continue };
        let (r0, r1) = span(v, k.reach, h);
        let (c0, c1) = span(u, k.reach, w);
        for row in r0..r1 {
            for col in c0..c1 {
                let [pu, pv] = resolution.pixel_center(row, col);
                let (val, _) = k.eval((pu - u).powi(2) + (pv - v).powi(2));
                data[(row * w + col) * jc + j] = a * val;
            }
        }
    }
    Tensor::new(vec![h, w, jc], data)
}

/// Heatmaps for one camera, off the tape.
pub fn render_heatmaps(renderer: &Renderer, cfg: &HeatmapConfig, params: &CinematicParams) -> Result<HeatmapStack> {
    params.validate()?;
    let sigma = cfg.sigma_for(renderer.resolution());
    let splats = joint_splats(renderer, cfg, &params.base, &params.packed());
    HeatmapStack::new(renderer.resolution(), sigma, splat_tensor(renderer.resolution(), sigma, &splats)?)
}

struct HeatmapOp {
    renderer: Renderer,
    cfg: HeatmapConfig,
    base: SE3Pose,
}

impl CustomOp for HeatmapOp {
    fn name(&self) -> &'static str {
        "heatmaps"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let p = packed_of(inputs[0])?;
        let res = self.renderer.resolution();
        let splats = joint_splats(&self.renderer, &self.cfg, &self.base, &p);
        splat_tensor(res, self.cfg.sigma_for(res), &splats)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, adjoint: &Tensor, stats: &mut BackwardStats) -> Result<Vec<Option<Tensor>>> {
        let p = packed_of(inputs[0])?;
        let jp: [Jet<8>; 8] = std::array::from_fn(|i| Jet::var(p[i], i));
        let res = self.renderer.resolution();
        let k = Splat::new(self.cfg.sigma_for(res));
        let splats = joint_splats(&self.renderer, &self.cfg, &self.base, &jp);
        let (h, w, jc) = (res.height, res.width, splats.len());
        let adj = adjoint.data();
        let mut touched = vec![false; h * w];
        let mut grad = [0.0; 8];
        for (j, s) in splats.iter().enumerate() {
            let Some(([u, v], a)) = *s else { continue };
            let (r0, r1) = span(v.v, k.reach, h);
            let (c0, c1) = span(u.v, k.reach, w);
            for row in r0..r1 {
                for col in c0..c1 {
                    let px = row * w + col;
                    let g = adj[px * jc + j];
                    if g == 0.0 {
                        continue;
                    }
                    touched[px] = true;
                    let [pu, pv] = res.pixel_center(row, col);
                    let (du, dv) = (pu - u.v, pv - v.v);
                    let (val, dval) = k.eval(du * du + dv * dv);
                    // ∂/∂θ [a k(r²)] with ∂r²/∂u = -2 du, ∂r²/∂v = -2 dv.
                    for i in 0..8 {
                        grad[i] += g * (val * a.d[i] + a.v * dval * (-2.0 * du * u.d[i] - 2.0 * dv * v.d[i]));
                    }
                }
            }
        }
        stats.evaluated_pixels += touched.iter().filter(|t| **t).count();
        Ok(vec![Some(Tensor::vector(grad.to_vec()))])
    }
}

/// Records the heatmaps of the packed camera `params` and registers them as
/// a maskable pixel node.
pub fn heatmaps_on_tape(tape: &mut Tape, renderer: &Renderer, cfg: &HeatmapConfig, params: Var, base: SE3Pose) -> Result<Var> {
    let op = HeatmapOp { renderer: renderer.clone(), cfg: *cfg, base };
    let out = tape.custom(Box::new(op), &[params])?;
    let res = renderer.resolution();
    tape.register_pixel_node(out, res.height, res.width)?;
    Ok(out)
}
