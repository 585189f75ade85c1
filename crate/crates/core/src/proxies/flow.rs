//! Geometric induced flow: back-project each pixel to its rendered surface
//! point, move it with the actor if the actor dominates there, and reproject
//! into the next camera.

use nalgebra::Vector3;

use crate::diffcore::{BackwardStats, CustomOp, Jet, Real, Tape, Tensor, Var, V3};
use crate::error::{Error, Result};
use crate::geometry::{Camera, CinematicParams, Resolution, SE3Pose, PARAMS_PER_CAMERA};
use crate::renderer::{Renderer, DEPTH_CHANNEL, OPACITY_CHANNEL, RENDER_CHANNELS};
use crate::scene::{displacement, Primitive, Support};

/// Pixels below this opacity carry no flow.
pub const FLOW_MIN_OPACITY: f64 = 1e-3;
/// Actor share of the density above which a surface point moves with the actor.
pub const ACTOR_GATE: f64 = 0.5;

/// `[H, W, 2]` pixel displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub resolution: Resolution,
    pub data: Tensor,
}

impl FlowField {
    pub fn new(resolution: Resolution, data: Tensor) -> Result<Self> {
        if data.shape() != [resolution.height, resolution.width, 2] {
            return Err(Error::Shape { op: "flow_field", shapes: vec![data.shape().to_vec()] });
        }
        if !data.all_finite() {
            return Err(Error::NonFinite("flow field".into()));
        }
        Ok(Self { resolution, data })
    }

    pub fn zeros(resolution: Resolution) -> Self {
        Self { resolution, data: Tensor::zeros(&[resolution.height, resolution.width, 2]) }
    }

    pub fn at(&self, row: usize, col: usize) -> [f64; 2] {
        let i = (row * self.resolution.width + col) * 2;
        [self.data.data()[i], self.data.data()[i + 1]]
    }
}

/// Per-frame state shared by all pixels of one flow evaluation.
struct FlowFrame<T: Real> {
    cam_t: Camera<T>,
    cam_t1: Camera<T>,
    joints_t: Vec<V3<T>>,
    joints_t1: Vec<V3<T>>,
    plain_joints: Vec<V3<f64>>,
    bones: Vec<(Primitive, Support)>,
}

fn frame<T: Real>(renderer: &Renderer, bases: &[SE3Pose; 2], pt: &[T; 8], pt1: &[T; 8]) -> FlowFrame<T> {
    let scene = renderer.scene();
    let res = renderer.resolution();
    let joints_t = scene.joints_at(pt[7]);
    let plain_joints: Vec<V3<f64>> = joints_t.iter().map(|j| [j[0].value(), j[1].value(), j[2].value()]).collect();
    let bones = scene.bone_supports(&plain_joints.iter().map(|j| Vector3::from(*j)).collect::<Vec<_>>());
    FlowFrame {
        cam_t: Camera::from_packed(&bases[0], pt, res),
        cam_t1: Camera::from_packed(&bases[1], pt1, res),
        joints_t,
        joints_t1: scene.joints_at(pt1[7]),
        plain_joints,
        bones,
    }
}

fn flow_pixel<T: Real>(renderer: &Renderer, f: &FlowFrame<T>, px: usize, depth: T, opacity: f64) -> [T; 2] {
    if opacity < FLOW_MIN_OPACITY {
        return [T::zero(), T::zero()];
    }
    let res = renderer.resolution();
    let scene = renderer.scene();
    let [u, v] = res.pixel_center(px / res.width, px % res.width);
    let d = f.cam_t.ray_direction(u, v);
    let c = f.cam_t.center;
    let mut x = [c[0] + d[0] * depth, c[1] + d[1] * depth, c[2] + d[2] * depth];

    let xv = [x[0].value(), x[1].value(), x[2].value()];
    let field = scene.sample_with(xv, &f.plain_joints, &f.bones);
    let total = field.total();
    if total > 0.0 && field.actor / total > ACTOR_GATE {
        if let Some((b, s)) = scene.dominant_bone(x, &f.joints_t) {
            let [ja, jb] = scene.bone_joints(b);
            let dx = displacement(f.joints_t[ja], f.joints_t1[ja], f.joints_t[jb], f.joints_t1[jb], s);
            x = [x[0] + dx[0], x[1] + dx[1], x[2] + dx[2]];
        }
    }

    let diag = res.diagonal();
    let Some([pu, pv]) = f.cam_t1.project(x) else {
        let k = T::cst(diag / std::f64::consts::SQRT_2);
        return [k, k];
    };
    let (fu, fv) = (pu - u, pv - v);
    let mag = (fu * fu + fv * fv).sqrt();
    if mag.value() > diag {
        let k = T::cst(diag) / mag;
        return [fu * k, fv * k];
    }
    [fu, fv]
}

fn packed_pair(a: &Tensor, b: &Tensor) -> Result<([f64; 8], [f64; 8])> {
    let conv = |t: &Tensor| -> Result<[f64; 8]> {
        t.data().try_into().map_err(|_| Error::Shape { op: "induced_flow", shapes: vec![t.shape().to_vec(), vec![PARAMS_PER_CAMERA]] })
    };
    Ok((conv(a)?, conv(b)?))
}

fn check_render(renderer: &Renderer, render_t: &Tensor) -> Result<()> {
    let res = renderer.resolution();
    if render_t.shape() != [res.height, res.width, RENDER_CHANNELS] {
        return Err(Error::Shape { op: "induced_flow", shapes: vec![render_t.shape().to_vec()] });
    }
    Ok(())
}

/// Flow from camera `t` to camera `t1` given the packed render of `t`.
pub fn flow_tensor(renderer: &Renderer, bases: &[SE3Pose; 2], pt: &[f64; 8], pt1: &[f64; 8], render_t: &Tensor) -> Result<Tensor> {
    check_render(renderer, render_t)?;
    let res = renderer.resolution();
    let fr = frame(renderer, bases, pt, pt1);
    let mut out = Vec::with_capacity(res.pixels() * 2);
    for (px, r) in render_t.data().chunks(RENDER_CHANNELS).enumerate() {
        let fl = flow_pixel(renderer, &fr, px, r[DEPTH_CHANNEL], r[OPACITY_CHANNEL]);
        if !fl[0].is_finite() || !fl[1].is_finite() {
            return Err(Error::RenderPixel { row: px / res.width, col: px % res.width });
        }
        out.extend_from_slice(&fl);
    }
    Tensor::new(vec![res.height, res.width, 2], out)
}

/// Off-tape induced flow between two cameras.
pub fn induced_flow(renderer: &Renderer, params_t: &CinematicParams, params_t1: &CinematicParams) -> Result<FlowField> {
    let render_t = renderer.render_packed(&params_t.base, &params_t.packed())?;
    induced_flow_from_render(renderer, params_t, params_t1, &render_t)
}

pub fn induced_flow_from_render(
    renderer: &Renderer,
    params_t: &CinematicParams,
    params_t1: &CinematicParams,
    render_t: &Tensor,
) -> Result<FlowField> {
    params_t.validate()?;
    params_t1.validate()?;
    let data = flow_tensor(renderer, &[params_t.base, params_t1.base], &params_t.packed(), &params_t1.packed(), render_t)?;
    FlowField::new(renderer.resolution(), data)
}

struct FlowOp {
    renderer: Renderer,
    bases: [SE3Pose; 2],
}

impl CustomOp for FlowOp {
    fn name(&self) -> &'static str {
        "induced_flow"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (pt, pt1) = packed_pair(inputs[0], inputs[1])?;
        flow_tensor(&self.renderer, &self.bases, &pt, &pt1, inputs[2])
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, adjoint: &Tensor, stats: &mut BackwardStats) -> Result<Vec<Option<Tensor>>> {
        let (pt, pt1) = packed_pair(inputs[0], inputs[1])?;
        let render_t = inputs[2];
        let jt: [Jet<17>; 8] = std::array::from_fn(|i| Jet::var(pt[i], i));
        let jt1: [Jet<17>; 8] = std::array::from_fn(|i| Jet::var(pt1[i], 8 + i));
        let fr = frame(&self.renderer, &self.bases, &jt, &jt1);
        let mut g_t = [0.0; 8];
        let mut g_t1 = [0.0; 8];
        let mut g_render = vec![0.0; render_t.len()];
        for (px, adj) in adjoint.data().chunks(2).enumerate() {
            if adj[0] == 0.0 && adj[1] == 0.0 {
                continue;
            }
            let r = &render_t.data()[px * RENDER_CHANNELS..(px + 1) * RENDER_CHANNELS];
            if r[OPACITY_CHANNEL] < FLOW_MIN_OPACITY {
                continue;
            }
            stats.evaluated_pixels += 1;
            let depth = Jet::var(r[DEPTH_CHANNEL], 16);
            let fl = flow_pixel(&self.renderer, &fr, px, depth, r[OPACITY_CHANNEL]);
            for c in 0..2 {
                let a = adj[c];
                for i in 0..8 {
                    g_t[i] += a * fl[c].d[i];
                    g_t1[i] += a * fl[c].d[8 + i];
                }
                g_render[px * RENDER_CHANNELS + DEPTH_CHANNEL] += a * fl[c].d[16];
            }
        }
        Ok(vec![
            Some(Tensor::vector(g_t.to_vec())),
            Some(Tensor::vector(g_t1.to_vec())),
            Some(Tensor::new(render_t.shape().to_vec(), g_render)?),
        ])
    }
}

/// Records the induced flow between two packed cameras, given the render node
/// of the first, and registers it as a maskable pixel node.
pub fn flow_on_tape(tape: &mut Tape, renderer: &Renderer, params: [Var; 2], bases: [SE3Pose; 2], render_t: Var) -> Result<Var> {
    let op = FlowOp { renderer: renderer.clone(), bases };
    let out = tape.custom(Box::new(op), &[params[0], params[1], render_t])?;
    let res = renderer.resolution();
    tape.register_pixel_node(out, res.height, res.width)?;
    Ok(out)
}
