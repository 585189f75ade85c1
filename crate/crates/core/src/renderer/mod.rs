//! Emission-absorption volume rendering of a [`DynamicScene`].
//!
//! Every pixel is an independent stratified quadrature along its ray. The
//! forward pass runs on `f64`; the adjoint re-traces only the pixels that
//! received a nonzero adjoint with an 8-direction jet over the packed camera
//! parameters and contracts the result with that adjoint.

mod dump;

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dump::{depth_grid_string, frame_file_stem, write_depth_grid, write_pgm, write_ppm, FrameRole};

use crate::diffcore::{BackwardStats, CustomOp, Jet, Real, Tape, Tensor, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::{Camera, CinematicParams, Resolution, SE3Pose, PARAMS_PER_CAMERA};
use crate::scene::{mixture_color, DynamicScene, FieldSample, Primitive, Support};

/// Channels of a packed render: red, green, blue, depth, opacity.
pub const RENDER_CHANNELS: usize = 5;
pub const DEPTH_CHANNEL: usize = 3;
pub const OPACITY_CHANNEL: usize = 4;

/// Opacity below which a pixel reports the far plane as its depth.
pub const EMPTY_OPACITY: f64 = 1e-6;
/// Transmittance below which marching stops.
const TERMINATE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub n_samples: usize,
    pub near: f64,
    pub far: f64,
    /// Seeds the per-pixel stratification jitter.
    pub seed: u64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { n_samples: 64, near: 0.2, far: 8.0, seed: 0 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::invalid("n_samples", format!("need at least 2, got {}", self.n_samples)));
        }
        if !(self.near >= 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::invalid("near/far", format!("need 0 <= near < far, got {} and {}", self.near, self.far)));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.far - self.near) / self.n_samples as f64
    }
}

/// Color, expected depth and opacity images.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub resolution: Resolution,
    /// `[H, W, 3]`
    pub color: Tensor,
    /// `[H, W]`
    pub depth: Tensor,
    /// `[H, W]`
    pub opacity: Tensor,
}

impl RenderedFrame {
    /// Splits a packed `[H, W, 5]` render.
    pub fn from_packed(resolution: Resolution, packed: &Tensor) -> Result<Self> {
        let n = resolution.pixels();
        if packed.shape() != [resolution.height, resolution.width, RENDER_CHANNELS] {
            return Err(Error::Shape { op: "rendered_frame", shapes: vec![packed.shape().to_vec()] });
        }
        let mut color = Vec::with_capacity(3 * n);
        let mut depth = Vec::with_capacity(n);
        let mut opacity = Vec::with_capacity(n);
        for px in packed.data().chunks(RENDER_CHANNELS) {
            color.extend_from_slice(&px[..3]);
            depth.push(px[DEPTH_CHANNEL]);
            opacity.push(px[OPACITY_CHANNEL]);
        }
        let (h, w) = (resolution.height, resolution.width);
        Ok(Self {
            resolution,
            color: Tensor::new(vec![h, w, 3], color)?,
            depth: Tensor::new(vec![h, w], depth)?,
            opacity: Tensor::new(vec![h, w], opacity)?,
        })
    }

    pub fn pixel_color(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.resolution.width + col) * 3;
        let c = self.color.data();
        [c[i], c[i + 1], c[i + 2]]
    }

    pub fn pixel_depth(&self, row: usize, col: usize) -> f64 {
        self.depth.data()[row * self.resolution.width + col]
    }

    pub fn pixel_opacity(&self, row: usize, col: usize) -> f64 {
        self.opacity.data()[row * self.resolution.width + col]
    }
}

/// Scene, resolution and quadrature bundled with the precomputed jitter table.
#[derive(Clone)]
pub struct Renderer {
    scene: Arc<DynamicScene>,
    resolution: Resolution,
    quadrature: QuadratureConfig,
    jitter: Arc<Vec<f64>>,
}

impl std::fmt::Debug for Renderer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Renderer")
            .field("scene", &self.scene.name())
            .field("resolution", &self.resolution)
            .field("quadrature", &self.quadrature)
            .finish()
    }
}

/// A support crossed by a ray, as a parameter interval.
#[derive(Debug, Clone, Copy)]
struct Hit {
    primitive: Primitive,
    t0: f64,
    t1: f64,
}

impl Renderer {
    pub fn new(scene: Arc<DynamicScene>, resolution: Resolution, quadrature: QuadratureConfig) -> Result<Self> {
        quadrature.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(quadrature.seed);
        let jitter = (0..resolution.pixels() * quadrature.n_samples).map(|_| rng.gen::<f64>()).collect();
        Ok(Self { scene, resolution, quadrature, jitter: Arc::new(jitter) })
    }

    pub fn scene(&self) -> &DynamicScene {
        &self.scene
    }

    pub fn scene_arc(&self) -> &Arc<DynamicScene> {
        &self.scene
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quadrature
    }

    /// Sample distances along the ray of flat pixel `p`.
    pub fn sample_distances(&self, p: usize) -> impl Iterator<Item = f64> + '_ {
        let q = &self.quadrature;
        let delta = q.spacing();
        let n = q.n_samples;
        self.jitter[p * n..(p + 1) * n].iter().enumerate().map(move |(i, u)| q.near + (i as f64 + u) * delta)
    }

    fn hits(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, bones: &[(Primitive, Support)]) -> Vec<Hit> {
        let (near, far) = (self.quadrature.near, self.quadrature.far);
        self.scene
            .static_primitives()
            .iter()
            .chain(bones)
            .filter_map(|(p, s)| {
                let (t0, t1) = s.ray_interval(origin, dir)?;
                (t1 >= near && t0 <= far).then_some(Hit { primitive: *p, t0, t1 })
            })
            .collect()
    }

    /// Quadrature for one pixel: `[r, g, b, depth, opacity]`.
    fn trace<T: Real>(&self, cam: &Camera<T>, joints: &[V3<T>], bones: &[(Primitive, Support)], p: usize) -> [T; 5] {
        let res = self.resolution;
        let [u, v] = res.pixel_center(p / res.width, p % res.width);
        let d = cam.ray_direction(u, v);
        let o = cam.center;
        let plain = |a: V3<T>| Vector3::new(a[0].value(), a[1].value(), a[2].value());
        let hits = self.hits(&plain(o), &plain(d), bones);
        let bg = self.scene.background_color();
        let far = T::cst(self.quadrature.far);
        if hits.is_empty() {
            return [T::cst(bg[0]), T::cst(bg[1]), T::cst(bg[2]), far, T::zero()];
        }
        let delta = self.quadrature.spacing();
        let mut trans = T::one();
        let mut acc = [T::zero(); 3];
        let mut acc_depth = T::zero();
        let mut opacity = T::zero();
        for t in self.sample_distances(p) {
            let mut sample = FieldSample::zero();
            let mut any = false;
            let x = [o[0] + d[0] * t, o[1] + d[1] * t, o[2] + d[2] * t];
            for h in hits.iter().filter(|h| h.t0 <= t && t <= h.t1) {
                any = true;
                let density = self.scene.density_of(h.primitive, x, joints);
                sample.accumulate(density, self.scene.color_of(h.primitive), h.primitive.is_actor());
            }
            if !any {
                continue;
            }
            let sigma = sample.total();
            if sigma.value() <= 0.0 {
                continue;
            }
            let e = (-sigma * delta).exp();
            let w = trans * (-e + 1.0);
            let c = mixture_color(&sample, bg);
            for k in 0..3 {
                acc[k] += w * c[k];
            }
            acc_depth += w * t;
            opacity += w;
            trans *= e;
            if trans.value() < TERMINATE {
                break;
            }
        }
        let rest = -opacity + 1.0;
        let depth = if opacity.value() < EMPTY_OPACITY {
            far
        } else {
            acc_depth / if opacity.value() > 1e-8 { opacity } else { T::cst(1e-8) }
        };
        [acc[0] + rest * bg[0], acc[1] + rest * bg[1], acc[2] + rest * bg[2], depth, opacity]
    }

    fn check_packed(packed: &[f64]) -> Result<[f64; PARAMS_PER_CAMERA]> {
        let p: [f64; PARAMS_PER_CAMERA] = packed
            .try_into()
            .map_err(|_| Error::Shape { op: "render", shapes: vec![vec![packed.len()], vec![PARAMS_PER_CAMERA]] })?;
        if !(p[6] > 0.0) || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("params", format!("focal must be positive and all values finite: {p:?}")));
        }
        Ok(p)
    }

    /// Packed `[H, W, 5]` render for `base ∘ exp(xi)`.
    pub fn render_packed(&self, base: &SE3Pose, packed: &[f64]) -> Result<Tensor> {
        let p = Self::check_packed(packed)?;
        let cam = Camera::from_packed(base, &p, self.resolution);
        let joints = self.scene.joints_at(p[7]);
        let bones = self.scene.bone_supports(&joints.iter().map(|j| Vector3::from(*j)).collect::<Vec<_>>());
        let n = self.resolution.pixels();
        let mut out = Vec::with_capacity(n * RENDER_CHANNELS);
        for px in 0..n {
            let r = self.trace(&cam, &joints, &bones, px);
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::RenderPixel { row: px / self.resolution.width, col: px % self.resolution.width });
            }
            out.extend_from_slice(&r);
        }
        Tensor::new(vec![self.resolution.height, self.resolution.width, RENDER_CHANNELS], out)
    }

    pub fn render(&self, params: &CinematicParams) -> Result<RenderedFrame> {
        params.validate()?;
        RenderedFrame::from_packed(self.resolution, &self.render_packed(&params.base, &params.packed())?)
    }

    /// Jacobian-vector contraction `Σ_c adjoint[p, c] ∂render[p, c] / ∂params`
    /// over pixels with a nonzero adjoint.
    pub fn render_vjp(&self, base: &SE3Pose, packed: &[f64], adjoint: &Tensor, stats: &mut BackwardStats) -> Result<Vec<f64>> {
        let p = Self::check_packed(packed)?;
        let jp: [Jet<8>; 8] = std::array::from_fn(|i| Jet::var(p[i], i));
        let cam = Camera::from_packed(base, &jp, self.resolution);
        let joints = self.scene.joints_at(jp[7]);
        let plain: Vec<Vector3<f64>> = joints.iter().map(|j| Vector3::new(j[0].v, j[1].v, j[2].v)).collect();
        let bones = self.scene.bone_supports(&plain);
        let mut grad = [0.0; 8];
        for (px, adj) in adjoint.data().chunks(RENDER_CHANNELS).enumerate() {
            if adj.iter().all(|a| *a == 0.0) {
                continue;
            }
            stats.evaluated_pixels += 1;
            let r = self.trace(&cam, &joints, &bones, px);
            for (c, a) in adj.iter().enumerate() {
                if *a != 0.0 {
                    for (g, d) in grad.iter_mut().zip(r[c].d) {
                        *g += a * d;
                    }
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::RenderPixel { row: px / self.resolution.width, col: px % self.resolution.width });
            }
        }
        Ok(grad.to_vec())
    }

    /// Records a render of the packed parameters held by `params` and
    /// registers its output as a maskable pixel node.
    pub fn render_on_tape(&self, tape: &mut Tape, params: Var, base: SE3Pose) -> Result<Var> {
        let out = tape.custom(Box::new(RenderOp { renderer: self.clone(), base }), &[params])?;
        tape.register_pixel_node(out, self.resolution.height, self.resolution.width)?;
        Ok(out)
    }

    /// Two independent renders of a camera pair on one tape.
    pub fn render_window(&self, tape: &mut Tape, params: [Var; 2], bases: [SE3Pose; 2]) -> Result<[Var; 2]> {
        Ok([self.render_on_tape(tape, params[0], bases[0])?, self.render_on_tape(tape, params[1], bases[1])?])
    }

    /// Plain renders of a camera pair.
    pub fn render_pair(&self, pair: &[CinematicParams; 2]) -> Result<[RenderedFrame; 2]> {
        Ok([self.render(&pair[0])?, self.render(&pair[1])?])
    }

    /// Transmittance through static density only along the segment `from → to`,
    /// midpoint rule with `n` samples.
    pub fn background_transmittance<T: Real>(&self, from: V3<T>, to: V3<T>, n: usize) -> T {
        let seg = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
        let len = (seg[0] * seg[0] + seg[1] * seg[1] + seg[2] * seg[2]).sqrt();
        if len.value() <= 0.0 {
            return T::one();
        }
        let dir = [seg[0] / len, seg[1] / len, seg[2] / len];
        let o = Vector3::new(from[0].value(), from[1].value(), from[2].value());
        let dv = Vector3::new(dir[0].value(), dir[1].value(), dir[2].value());
        let lv = len.value();
        let hits: Vec<Hit> = self
            .scene
            .static_primitives()
            .iter()
            .filter_map(|(p, s)| {
                let (t0, t1) = s.ray_interval(&o, &dv)?;
                (t1 >= 0.0 && t0 <= lv).then_some(Hit { primitive: *p, t0: t0 / lv, t1: t1 / lv })
            })
            .collect();
        let mut depth = T::zero();
        for i in 0..n {
            let f = (i as f64 + 0.5) / n as f64;
            let x = [from[0] + seg[0] * f, from[1] + seg[1] * f, from[2] + seg[2] * f];
            for h in hits.iter().filter(|h| h.t0 <= f && f <= h.t1) {
                depth += self.scene.density_of(h.primitive, x, &[]);
            }
        }
        (-(depth * len) / n as f64).exp()
    }
}

struct RenderOp {
    renderer: Renderer,
    base: SE3Pose,
}

impl CustomOp for RenderOp {
    fn name(&self) -> &'static str {
        "render"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.renderer.render_packed(&self.base, inputs[0].data())
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, adjoint: &Tensor, stats: &mut BackwardStats) -> Result<Vec<Option<Tensor>>> {
        let g = self.renderer.render_vjp(&self.base, inputs[0].data(), adjoint, stats)?;
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), g)?)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{central_difference, relative_error};
    use crate::scene::{preset, ActorConfig, BlobConfig, BoneConfig, BoundsConfig, SceneConfig, SlabConfig, SCHEMA_VERSION};

    const RES: Resolution = Resolution::new(16, 16);

    fn config(blobs: Vec<BlobConfig>, slabs: Vec<SlabConfig>) -> SceneConfig {
        SceneConfig {
            schema_version: SCHEMA_VERSION,
            name: "test".into(),
            background_color: [0.2, 0.4, 0.6],
            bounds: BoundsConfig { min: [-20.0; 3], max: [20.0; 3] },
            blobs,
            slabs,
            actor: ActorConfig {
                joint_names: vec!["a".into(), "b".into()],
                times: vec![0.0, 1.0],
                // Parked far off to the side so it never enters the view.
                keyframes: vec![vec![[15.0, 15.0, -15.0], [15.0, 15.5, -15.0]]; 2],
                bones: vec![BoneConfig { joints: [0, 1], radius: 0.05, density: 1.0, color: [1.0; 3] }],
            },
        }
    }

    fn front_camera(focal: f64) -> CinematicParams {
        CinematicParams::new(SE3Pose::identity(), focal, 0.0)
    }

    fn renderer(cfg: SceneConfig, quad: QuadratureConfig) -> Renderer {
        Renderer::new(Arc::new(DynamicScene::build(cfg).unwrap()), RES, quad).unwrap()
    }

    #[test]
    fn empty_scene_is_background() {
        let r = renderer(config(vec![], vec![]), QuadratureConfig::default());
        let f = r.render(&front_camera(10.0)).unwrap();
        for row in 0..16 {
            for col in 0..16 {
                assert_eq!(f.pixel_color(row, col), [0.2, 0.4, 0.6]);
                assert_eq!(f.pixel_opacity(row, col), 0.0);
                assert_eq!(f.pixel_depth(row, col), 8.0);
            }
        }
    }

    #[test]
    fn opaque_wall_depth_within_one_sample() {
        let wall = SlabConfig { min: [-10.0, -10.0, 3.0], max: [10.0, 10.0, 4.0], softness: 0.01, density: 200.0, color: [0.5; 3] };
        let quad = QuadratureConfig::default();
        let r = renderer(config(vec![], vec![wall]), quad);
        let f = r.render(&front_camera(8.0)).unwrap();
        // Depth is distance along the ray; the wall is at z = 3 in camera space.
        let [u, v] = RES.pixel_center(8, 8);
        let dz = ((u - 8.0).powi(2) + (v - 8.0).powi(2) + 64.0).sqrt() / 8.0;
        assert!(f.pixel_opacity(8, 8) > 0.999);
        assert!((f.pixel_depth(8, 8) - 3.0 * dz).abs() <= quad.spacing());
    }

    /// Independent midpoint-rule integration with many samples.
    fn dense_oracle(scene: &DynamicScene, params: &CinematicParams, quad: &QuadratureConfig, row: usize, col: usize) -> [f64; 3] {
        let n = 4096;
        let pose = params.pose();
        let ray = crate::geometry::generate_ray(RES.pixel_center(row, col), &pose, params.focal, RES);
        let delta = (quad.far - quad.near) / n as f64;
        let (mut trans, mut c) = (1.0, [0.0; 3]);
        for i in 0..n {
            let t = quad.near + (i as f64 + 0.5) * delta;
            let x = ray.origin + ray.direction * t;
            let sigma = scene.sample_density(&x, params.time);
            let col = scene.sample_color(&x, params.time);
            let a = 1.0 - (-sigma * delta).exp();
            for k in 0..3 {
                c[k] += trans * a * col[k];
            }
            trans *= 1.0 - a;
        }
        let bg = scene.background_color();
        [c[0] + trans * bg[0], c[1] + trans * bg[1], c[2] + trans * bg[2]]
    }

    #[test]
    fn single_blob_matches_dense_oracle() {
        let blob = BlobConfig { center: [0.0, 0.0, 4.0], sigma: [0.8, 0.8, 0.8], density: 1.5, color: [0.9, 0.3, 0.1] };
        let quad = QuadratureConfig::default();
        let r = renderer(config(vec![blob], vec![]), quad);
        let params = front_camera(12.0);
        let f = r.render(&params).unwrap();
        let mut worst: f64 = 0.0;
        for row in 0..16 {
            for col in 0..16 {
                let o = dense_oracle(r.scene(), &params, &quad, row, col);
                let c = f.pixel_color(row, col);
                for k in 0..3 {
                    worst = worst.max((c[k] - o[k]).abs());
                }
            }
        }
        assert!(worst <= 5e-3, "max color error {worst}");
    }

    #[test]
    fn more_samples_converge_toward_oracle() {
        let blob = BlobConfig { center: [0.3, -0.2, 4.0], sigma: [0.5, 0.7, 0.4], density: 3.0, color: [0.1, 0.8, 0.4] };
        let params = front_camera(12.0);
        let err = |n: usize| {
            let quad = QuadratureConfig { n_samples: n, ..Default::default() };
            let r = renderer(config(vec![blob.clone()], vec![]), quad);
            let f = r.render(&params).unwrap();
            let mut total = 0.0;
            for row in 0..16 {
                for col in 0..16 {
                    let o = dense_oracle(r.scene(), &params, &quad, row, col);
                    let c = f.pixel_color(row, col);
                    total += (0..3).map(|k| (c[k] - o[k]).abs()).sum::<f64>();
                }
            }
            total / (256.0 * 3.0)
        };
        let (e16, e32, e64, e128) = (err(16), err(32), err(64), err(128));
        assert!(e16 > e32 && e32 > e64 && e64 > e128, "{e16} {e32} {e64} {e128}");
    }

    #[test]
    fn window_renders_are_independent_and_deterministic() {
        let scene = Arc::new(preset("scene_a").unwrap());
        let r = Renderer::new(scene, RES, QuadratureConfig::default()).unwrap();
        let base = SE3Pose::look_at(Vector3::new(0.0, 1.1, -3.0), Vector3::new(0.0, 1.0, 0.0), Vector3::y());
        let a = CinematicParams::new(base, 15.0, 0.4);
        let [f0, f1] = r.render_pair(&[a, a]).unwrap();
        assert_eq!(f0, f1);
        let mut b = a;
        b.focal = 18.0;
        assert_ne!(r.render(&b).unwrap(), f0);
    }

    #[test]
    fn time_does_not_change_static_scene() {
        let wall = SlabConfig { min: [-10.0, -10.0, 3.0], max: [10.0, 10.0, 4.0], softness: 0.05, density: 2.0, color: [0.5; 3] };
        let r = renderer(config(vec![], vec![wall]), QuadratureConfig::default());
        let (mut a, mut b) = (front_camera(9.0), front_camera(9.0));
        a.time = 0.1;
        b.time = 0.9;
        assert_eq!(r.render(&a).unwrap(), r.render(&b).unwrap());
    }

    #[test]
    fn invalid_quadrature_rejected() {
        let scene = Arc::new(DynamicScene::build(config(vec![], vec![])).unwrap());
        assert!(Renderer::new(scene.clone(), RES, QuadratureConfig { n_samples: 1, ..Default::default() }).is_err());
        assert!(Renderer::new(scene, RES, QuadratureConfig { near: 3.0, far: 2.0, ..Default::default() }).is_err());
    }

    #[test]
    fn mean_intensity_gradient_matches_fd() {
        let scene = Arc::new(preset("scene_a").unwrap());
        let r = Renderer::new(scene, RES, QuadratureConfig::default()).unwrap();
        let base = SE3Pose::look_at(Vector3::new(0.1, 1.1, -3.0), Vector3::new(0.0, 1.0, 0.0), Vector3::y());
        let x0 = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 15.0, 0.37];
        let n = (RES.pixels() * 3) as f64;
        let mut adj = Tensor::zeros(&[16, 16, RENDER_CHANNELS]);
        for px in adj.data_mut().chunks_mut(RENDER_CHANNELS) {
            px[..3].iter_mut().for_each(|a| *a = 1.0 / n);
        }
        let g = r.render_vjp(&base, &x0, &adj, &mut BackwardStats::default()).unwrap();
        let mut f = |x: &[f64]| {
            let t = r.render_packed(&base, x)?;
            Ok(t.data().chunks(RENDER_CHANNELS).map(|p| p[0] + p[1] + p[2]).sum::<f64>() / n)
        };
        let fd = central_difference(&mut f, &x0, 1e-4).unwrap();
        let err = relative_error(&g, &fd);
        assert!(err <= 1e-3, "analytic {g:?}\nfd {fd:?}\nerr {err}");
    }

    #[test]
    fn tape_gradient_skips_zero_adjoint_pixels() {
        let scene = Arc::new(preset("scene_b").unwrap());
        let r = Renderer::new(scene, RES, QuadratureConfig::default()).unwrap();
        let base = SE3Pose::look_at(Vector3::new(0.0, 1.1, -3.0), Vector3::new(0.0, 1.0, 0.0), Vector3::y());
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 15.0, 0.5]));
        let img = r.render_on_tape(&mut tape, p, base).unwrap();
        let loss = tape.mean(img).unwrap();
        tape.apply_gradient_mask(&[img], &[3, 40, 41]).unwrap();
        let (_, stats) = tape.grad_with_stats(loss, &[p]).unwrap();
        assert_eq!(stats.evaluated_pixels, 3);
        assert_eq!(stats.active_pixels, 3);
    }
}
