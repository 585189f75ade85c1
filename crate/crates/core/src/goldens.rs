//! Golden values checked into `data/goldens/`.
//!
//! Each case records where its numbers come from. `Trivial` values are
//! exact by construction. `Oracle` values come from a reference
//! implementation in [`crate::oracles`] or from central differences, and are
//! compared against the fast code path within the case tolerance.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{se3_exp, CinematicParams, Resolution, SE3Pose, Trajectory};
use crate::harness::{MotionKind, MotionSpec};
use crate::losses::{sinkhorn_histograms, OTConfig};
use crate::metrics::rmse_ate;
use crate::optimizer::{window_objective, ClipTargets, OptimConfig, WINDOW_PARAMS};
use crate::oracles::{dense_pixel_color, exact_ot};
use crate::proxies::make_reference;
use crate::renderer::{QuadratureConfig, Renderer};
use crate::scene::preset;

pub const GOLDEN_FILE: &str = "goldens.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Trivial,
    /// Exact transport by network flow.
    OracleLp,
    /// Central finite differences.
    OracleFd,
    /// Midpoint quadrature with many samples.
    OracleDense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub id: String,
    pub origin: Origin,
    pub inputs: serde_json::Value,
    pub expected: Vec<f64>,
    /// Allowed `|actual − expected| / max(|expected|, floor)` per value,
    /// where `floor` is `1e-6 × max |expected|`.
    pub tolerance: f64,
}

impl GoldenCase {
    fn divergence(&self, actual: &[f64]) -> Option<String> {
        if actual.len() != self.expected.len() {
            return Some(format!("{}: {} values, expected {}", self.id, actual.len(), self.expected.len()));
        }
        let scale = self.expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = actual
            .iter()
            .zip(&self.expected)
            .map(|(a, e)| (a - e).abs() / e.abs().max(1e-6 * scale).max(f64::MIN_POSITIVE))
            .fold(0.0f64, f64::max);
        (worst > self.tolerance || actual.iter().any(|v| !v.is_finite()))
            .then(|| format!("{}: relative error {worst:.3e} > {:.1e}", self.id, self.tolerance))
    }
}

const OT_CASES: u64 = 4;
const OT_SIDE: usize = 6;
const OT_EPSILON: f64 = 1e-3;

fn ot_histograms(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = OT_SIDE * OT_SIDE;
    let mut draw = || {
        let v: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.4) { rng.gen_range(0.05..1.0) } else { 0.0 }).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    (draw(), draw())
}

fn grid_cost(i: usize, j: usize) -> f64 {
    let (dr, dc) = ((i / OT_SIDE).abs_diff(j / OT_SIDE), (i % OT_SIDE).abs_diff(j % OT_SIDE));
    (((dr * dr + dc * dc) as f64) / (2 * OT_SIDE * OT_SIDE) as f64).sqrt()
}

fn ot_sinkhorn(seed: u64) -> Result<f64> {
    let (a, b) = ot_histograms(seed);
    sinkhorn_histograms(&a, &b, OT_SIDE, OT_SIDE, &OTConfig { epsilon: OT_EPSILON, iters: 2000, ..Default::default() })
}

const DENSE_RES: Resolution = Resolution::new(16, 16);
const DENSE_FAST_SAMPLES: usize = 512;
const DENSE_PIXELS: [(usize, usize); 6] = [(2, 2), (8, 8), (8, 3), (11, 8), (13, 12), (15, 0)];

fn dense_camera() -> CinematicParams {
    let pose = SE3Pose::look_at(Vector3::new(0.4, 1.2, -2.8), Vector3::new(0.0, 1.0, 0.0), Vector3::y());
    CinematicParams::new(pose, 14.0, 0.35)
}

fn dense_renderer() -> Result<Renderer> {
    let quad = QuadratureConfig { n_samples: DENSE_FAST_SAMPLES, ..Default::default() };
    Renderer::new(Arc::new(preset("scene_a")?), DENSE_RES, quad)
}

fn dense_fast() -> Result<Vec<f64>> {
    let r = dense_renderer()?;
    let f = r.render(&dense_camera())?;
    Ok(DENSE_PIXELS.iter().flat_map(|&(row, col)| f.pixel_color(row, col)).collect())
}

fn dense_oracle() -> Result<Vec<f64>> {
    let r = dense_renderer()?;
    let q = r.quadrature();
    Ok(DENSE_PIXELS
        .iter()
        .flat_map(|&(row, col)| dense_pixel_color(r.scene(), &dense_camera(), DENSE_RES, q.near, q.far, 8192, row, col))
        .collect())
}

/// A two-frame arc transfer at 16×16, perturbed away from the truth so every
/// loss term has a nonzero gradient. Both times avoid the actor's keyframe
/// times, where joint motion has a kink.
struct FdSetup {
    renderer: Renderer,
    cfg: OptimConfig,
    params: [CinematicParams; 2],
    gt: Trajectory,
}

impl FdSetup {
    fn new() -> Result<Self> {
        let mut motion = MotionSpec::new(MotionKind::Arc);
        motion.frames = 2;
        motion.focal = 15.0;
        let gt = motion.trajectory(0)?;
        let quad = QuadratureConfig { n_samples: 32, ..Default::default() };
        let renderer = Renderer::new(Arc::new(preset("scene_a")?), Resolution::new(16, 16), quad)?;
        let cfg = OptimConfig { ot: OTConfig { grid: [8, 8], ..Default::default() }, ..Default::default() };
        let p = gt.keyframes()[0].params;
        let nudge = se3_exp(&[0.01, -0.02, 0.015, 0.05, -0.03, 0.04]);
        let moved = CinematicParams::new(p.pose().compose(&nudge), p.focal * 1.05, p.time + 0.03);
        Ok(Self { renderer, cfg, params: [moved, CinematicParams { time: moved.time + 0.017, ..moved }], gt })
    }

    fn objective(&self, params: &[CinematicParams; 2]) -> Result<(f64, [f64; WINDOW_PARAMS])> {
        let clip = make_reference(&self.gt, &self.renderer, &self.cfg.heatmap)?;
        let targets = ClipTargets::new(&clip, &self.cfg)?;
        window_objective(&self.renderer, &targets, 0, params, &self.cfg)
    }

    fn analytic(&self) -> Result<Vec<f64>> {
        Ok(self.objective(&self.params)?.1.to_vec())
    }

    fn finite_difference(&self, h: f64) -> Result<Vec<f64>> {
        let clip = make_reference(&self.gt, &self.renderer, &self.cfg.heatmap)?;
        let targets = ClipTargets::new(&clip, &self.cfg)?;
        let at = |i: usize, d: f64| -> Result<f64> {
            let mut p = self.params;
            let k = i / 8;
            let mut x = p[k].packed();
            x[i % 8] += d;
            p[k] = p[k].with_packed(&x);
            Ok(window_objective(&self.renderer, &targets, 0, &p, &self.cfg)?.0)
        };
        (0..WINDOW_PARAMS).map(|i| Ok((at(i, h)? - at(i, -h)?) / (2.0 * h))).collect()
    }
}

const FD_STEP: f64 = 1e-4;

fn trivial_identity() -> Vec<f64> {
    let p = se3_exp(&[0.0; 6]);
    p.rotation.iter().chain(p.translation.iter()).copied().collect()
}

fn trivial_ate() -> Result<Vec<f64>> {
    let t = MotionSpec::new(MotionKind::Arc).trajectory(0)?;
    Ok(vec![rmse_ate(&t, &t)?])
}

/// Recomputes every golden case from its oracle.
pub fn compute_goldens() -> Result<Vec<GoldenCase>> {
    let mut cases = vec![
        GoldenCase {
            id: "se3-exp-zero".into(),
            origin: Origin::Trivial,
            inputs: json!({ "xi": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0] }),
            expected: trivial_identity(),
            tolerance: 0.0,
        },
        GoldenCase {
            id: "ate-self".into(),
            origin: Origin::Trivial,
            inputs: json!({ "motion": "arc", "seed": 0 }),
            expected: trivial_ate()?,
            tolerance: 0.0,
        },
    ];
    for seed in 0..OT_CASES {
        let (a, b) = ot_histograms(seed);
        cases.push(GoldenCase {
            id: format!("ot-6x6-{seed}"),
            origin: Origin::OracleLp,
            inputs: json!({ "seed": seed, "side": OT_SIDE, "epsilon": OT_EPSILON }),
            expected: vec![exact_ot(&a, &b, &grid_cost)?],
            tolerance: 0.02,
        });
    }
    cases.push(GoldenCase {
        id: "dense-render-scene-a".into(),
        origin: Origin::OracleDense,
        inputs: json!({ "scene": "scene_a", "resolution": "16x16", "pixels": DENSE_PIXELS, "samples": 8192, "fast_samples": DENSE_FAST_SAMPLES }),
        expected: dense_oracle()?,
        tolerance: 0.05,
    });
    let fd = FdSetup::new()?;
    cases.push(GoldenCase {
        id: "window-gradient-fd".into(),
        origin: Origin::OracleFd,
        inputs: json!({ "scene": "scene_a", "resolution": "16x16", "motion": "arc", "frames": 2, "step": FD_STEP }),
        expected: fd.finite_difference(FD_STEP)?,
        tolerance: 1e-3,
    });
    Ok(cases)
}

/// Runs the fast code path for case `id`.
fn fast_path(id: &str) -> Result<Vec<f64>> {
    match id {
        "se3-exp-zero" => Ok(trivial_identity()),
        "ate-self" => trivial_ate(),
        "dense-render-scene-a" => dense_fast(),
        "window-gradient-fd" => FdSetup::new()?.analytic(),
        _ => match id.strip_prefix("ot-6x6-").and_then(|s| s.parse().ok()) {
            Some(seed) => Ok(vec![ot_sinkhorn(seed)?]),
            None => Err(Error::invalid("golden id", format!("unknown case {id:?}"))),
        },
    }
}

pub fn goldens_json(cases: &[GoldenCase]) -> String {
    serde_json::to_string_pretty(cases).expect("goldens serialize") + "\n"
}

/// Rewrites `dir/goldens.json` from the oracles and returns its path.
pub fn regenerate_goldens(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(GOLDEN_FILE);
    std::fs::write(&path, goldens_json(&compute_goldens()?)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_goldens(path: &Path) -> Result<Vec<GoldenCase>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Compares the fast code paths against stored goldens; the error lists
/// every divergent case.
pub fn check_goldens(cases: &[GoldenCase]) -> Result<()> {
    let mut bad = Vec::new();
    for c in cases {
        match fast_path(&c.id) {
            Ok(v) => bad.extend(c.divergence(&v)),
            Err(e) => bad.push(format!("{}: {e}", c.id)),
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid("goldens", bad.join("; ")))
    }
}

/// Directory holding the committed goldens.
pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/goldens")
}
