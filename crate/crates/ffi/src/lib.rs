//! C ABI over the cinetransfer engine.
//!
//! Objects cross the boundary as opaque handles created by `ct_*_new` or
//! `ct_*_load` and released with the matching `ct_*_free`. Every fallible
//! call returns a [`CtStatus`]; the message of the last failure on the
//! calling thread is available from [`ct_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use cinetransfer::geometry::{CinematicParams, Resolution, SE3Pose, Trajectory};
use cinetransfer::harness::{cmd_copy_task, Scenario};
use cinetransfer::metrics::rmse_ate;
use cinetransfer::renderer::{QuadratureConfig, Renderer};
use cinetransfer::scene::{preset, DynamicScene};
use cinetransfer::Error;
use nalgebra::{Matrix3, Vector3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Io = 4,
    Parse = 5,
    Numerical = 6,
    OutOfBounds = 7,
    Optimization = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

fn status_of(e: &Error) -> CtStatus {
    match e {
        Error::Invalid { .. } | Error::Shape { .. } | Error::NotScalar(_) | Error::UnknownNode(_) => CtStatus::InvalidArgument,
        Error::OutOfRange { .. } => CtStatus::OutOfRange,
        Error::Io { .. } => CtStatus::Io,
        Error::Parse(_) | Error::Archive(_) => CtStatus::Parse,
        Error::NonFinite(_)
        | Error::NonFiniteAdjoint { .. }
        | Error::RenderPixel { .. }
        | Error::SinkhornDiverged { .. }
        | Error::BehindCamera { .. } => CtStatus::Numerical,
        Error::OutOfBounds { .. } => CtStatus::OutOfBounds,
        Error::Optimization { .. } | Error::Transfer { .. } => CtStatus::Optimization,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (CtStatus, String)>) -> CtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CtStatus::Panic
        }
    }
}

fn lib(e: Error) -> (CtStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CtStatus, String) {
    (CtStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (CtStatus, String) {
    (CtStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CtStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (CtStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (CtStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
#[no_mangle]
pub unsafe extern "C" fn ct_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn ct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// A camera: row-major world-from-camera rotation, camera centre, focal
/// length in pixels and normalized scene time.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtCamera {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub focal: f64,
    pub time: f64,
}

impl CtCamera {
    fn from_params(p: &CinematicParams) -> Self {
        let pose = p.pose();
        let r = pose.rotation;
        Self {
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
            focal: p.focal,
            time: p.time,
        }
    }

    fn to_params(self) -> Result<CinematicParams, (CtStatus, String)> {
        let pose = SE3Pose::new(Matrix3::from_row_slice(&self.rotation), Vector3::from(self.translation));
        let p = CinematicParams::new(pose, self.focal, self.time);
        p.validate().map_err(lib)?;
        Ok(p)
    }
}

/// Camera at `eye` looking at `target` with world +y up.
#[no_mangle]
pub unsafe extern "C" fn ct_camera_look_at(eye: *const f64, target: *const f64, focal: f64, time: f64, out: *mut CtCamera) -> CtStatus {
    guard(|| {
        if eye.is_null() || target.is_null() {
            return Err(null("eye/target"));
        }
        let (e, t) = (std::slice::from_raw_parts(eye, 3), std::slice::from_raw_parts(target, 3));
        let pose = SE3Pose::look_at(Vector3::new(e[0], e[1], e[2]), Vector3::new(t[0], t[1], t[2]), Vector3::y());
        let p = CinematicParams::new(pose, focal, time);
        p.validate().map_err(lib)?;
        *out_arg(out, "out")? = CtCamera::from_params(&p);
        Ok(())
    })
}

/// Opaque scene handle.
pub struct CtScene(Arc<DynamicScene>);

/// Built-in scene by name (`scene_a`, `scene_b`).
#[no_mangle]
pub unsafe extern "C" fn ct_scene_preset(name: *const c_char, out: *mut *mut CtScene) -> CtStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(CtScene(Arc::new(preset(name).map_err(lib)?))));
        Ok(())
    })
}

/// Scene from a TOML file.
#[no_mangle]
pub unsafe extern "C" fn ct_scene_load(path: *const c_char, out: *mut *mut CtScene) -> CtStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(CtScene(Arc::new(DynamicScene::load(Path::new(path)).map_err(lib)?))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_scene_free(scene: *mut CtScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ct_scene_diameter(scene: *const CtScene, out: *mut f64) -> CtStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        *out_arg(out, "out")? = s.0.diameter();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_scene_joint_count(scene: *const CtScene, out: *mut usize) -> CtStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        *out_arg(out, "out")? = s.0.joint_count();
        Ok(())
    })
}

/// Opaque renderer handle.
pub struct CtRenderer(Renderer);

/// Renderer over `scene` (which stays owned by the caller) with
/// `n_samples` quadrature samples per ray.
#[no_mangle]
pub unsafe extern "C" fn ct_renderer_new(
    scene: *const CtScene,
    height: usize,
    width: usize,
    n_samples: usize,
    out: *mut *mut CtRenderer,
) -> CtStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        let out = out_arg(out, "out")?;
        if height == 0 || width == 0 {
            return Err(invalid("resolution must be positive"));
        }
        let q = QuadratureConfig { n_samples, ..Default::default() };
        let r = Renderer::new(s.0.clone(), Resolution::new(height, width), q).map_err(lib)?;
        *out = Box::into_raw(Box::new(CtRenderer(r)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_renderer_free(renderer: *mut CtRenderer) {
    if !renderer.is_null() {
        drop(Box::from_raw(renderer));
    }
}

/// Renders `camera` into `rgb`, `height * width * 3` doubles in row-major
/// `[row][col][channel]` order.
#[no_mangle]
pub unsafe extern "C" fn ct_render(renderer: *const CtRenderer, camera: *const CtCamera, rgb: *mut f64, len: usize) -> CtStatus {
    guard(|| {
        let r = handle(renderer, "renderer")?;
        let cam = *handle(camera, "camera")?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let need = r.0.resolution().pixels() * 3;
        if len < need {
            return Err((CtStatus::BufferTooSmall, format!("need {need} values, got {len}")));
        }
        let frame = r.0.render(&cam.to_params()?).map_err(lib)?;
        std::slice::from_raw_parts_mut(rgb, need).copy_from_slice(frame.color.data());
        Ok(())
    })
}

/// Opaque keyframe trajectory handle.
pub struct CtTrajectory(Trajectory);

/// Trajectory from an export file.
#[no_mangle]
pub unsafe extern "C" fn ct_trajectory_load(path: *const c_char, out: *mut *mut CtTrajectory) -> CtStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(CtTrajectory(Trajectory::load(Path::new(path)).map_err(lib)?)));
        Ok(())
    })
}

/// Trajectory from `n` cameras numbered `0..n`.
#[no_mangle]
pub unsafe extern "C" fn ct_trajectory_from_cameras(cameras: *const CtCamera, n: usize, out: *mut *mut CtTrajectory) -> CtStatus {
    guard(|| {
        if cameras.is_null() && n > 0 {
            return Err(null("cameras"));
        }
        let out = out_arg(out, "out")?;
        let cams = if n == 0 { &[][..] } else { std::slice::from_raw_parts(cameras, n) };
        let params = cams.iter().map(|c| c.to_params()).collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(CtTrajectory(Trajectory::from_params(params))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_trajectory_save(traj: *const CtTrajectory, path: *const c_char) -> CtStatus {
    guard(|| {
        let t = handle(traj, "trajectory")?;
        let path = str_arg(path, "path")?;
        t.0.save(Path::new(path)).map_err(lib)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_trajectory_free(traj: *mut CtTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ct_trajectory_len(traj: *const CtTrajectory, out: *mut usize) -> CtStatus {
    guard(|| {
        let t = handle(traj, "trajectory")?;
        *out_arg(out, "out")? = t.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_trajectory_get(traj: *const CtTrajectory, index: usize, out: *mut CtCamera) -> CtStatus {
    guard(|| {
        let t = handle(traj, "trajectory")?;
        let k = t.0.keyframes().get(index).ok_or_else(|| (CtStatus::OutOfRange, format!("index {index} of {}", t.0.len())))?;
        *out_arg(out, "out")? = CtCamera::from_params(&k.params);
        Ok(())
    })
}

/// Root-mean-square camera-centre distance between two trajectories.
#[no_mangle]
pub unsafe extern "C" fn ct_rmse_ate(est: *const CtTrajectory, gt: *const CtTrajectory, out: *mut f64) -> CtStatus {
    guard(|| {
        let (a, b) = (handle(est, "est")?, handle(gt, "gt")?);
        *out_arg(out, "out")? = rmse_ate(&a.0, &b.0).map_err(lib)?;
        Ok(())
    })
}

/// Opaque scenario handle.
pub struct CtScenario(Scenario);

#[no_mangle]
pub unsafe extern "C" fn ct_scenario_load(path: *const c_char, out: *mut *mut CtScenario) -> CtStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(CtScenario(Scenario::load(Path::new(path)).map_err(lib)?)));
        Ok(())
    })
}

/// Scenario from TOML text.
#[no_mangle]
pub unsafe extern "C" fn ct_scenario_parse(text: *const c_char, out: *mut *mut CtScenario) -> CtStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(CtScenario(Scenario::from_toml(text).map_err(lib)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_scenario_free(scenario: *mut CtScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Overrides the scenario's seed and per-window iteration budget.
#[no_mangle]
pub unsafe extern "C" fn ct_scenario_configure(scenario: *mut CtScenario, seed: u64, iters_per_window: usize) -> CtStatus {
    guard(|| {
        let s = out_arg(scenario, "scenario")?;
        s.0.seed = seed;
        s.0.optim.iters_per_window = iters_per_window;
        Ok(())
    })
}

/// Summary of one copy-task run. Metrics that do not apply or were not
/// computed are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtReport {
    pub success: bool,
    pub rmse_ate: f64,
    pub pixel_error: f64,
    pub joint_error: f64,
    pub iterations: usize,
    pub peak_active_pixels: usize,
}

/// Runs the scenario's copy task. `out_dir` may be null to skip writing
/// files. A failed optimization still returns `Ok` with `success = false`.
#[no_mangle]
pub unsafe extern "C" fn ct_copy_task(scenario: *const CtScenario, out_dir: *const c_char, out: *mut CtReport) -> CtStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let out = out_arg(out, "out")?;
        let dir = if out_dir.is_null() { None } else { Some(Path::new(str_arg(out_dir, "out_dir")?)) };
        let rec = cmd_copy_task(&s.0, None, dir).map_err(lib)?;
        let r = &rec.report;
        *out = CtReport {
            success: r.success,
            rmse_ate: r.rmse_ate.unwrap_or(f64::NAN),
            pixel_error: r.pe.unwrap_or(f64::NAN),
            joint_error: r.je.unwrap_or(f64::NAN),
            iterations: rec.iterations,
            peak_active_pixels: rec.peak_active_pixels,
        };
        Ok(())
    })
}
