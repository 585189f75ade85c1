//! Trajectory, pixel and joint errors, and the loss-landscape probe.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{project, CinematicParams, Trajectory};
use crate::losses::{photometric_loss, OTConfig, PoseTarget};
use crate::proxies::{render_heatmaps, HeatmapConfig, ReferenceFrame};
use crate::renderer::Renderer;
use crate::scene::DynamicScene;

/// Root-mean-square camera-centre distance, no alignment.
pub fn rmse_ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let per = ate_per_frame(est, gt)?;
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok((per.iter().map(|e| e * e).sum::<f64>() / per.len() as f64).sqrt())
}

/// Camera-centre distance of every frame.
pub fn ate_per_frame(est: &Trajectory, gt: &Trajectory) -> Result<Vec<f64>> {
    if est.len() != gt.len() {
        return Err(Error::invalid("trajectory", format!("length {} vs {}", est.len(), gt.len())));
    }
    Ok(est.params().zip(gt.params()).map(|(a, b)| (a.pose().translation - b.pose().translation).norm()).collect())
}

/// Mean absolute color difference per frame; a pixel's error is the mean
/// over its channels.
pub fn pixel_error_per_frame(est: &[Tensor], reference: &[Tensor]) -> Result<Vec<f64>> {
    if est.len() != reference.len() {
        return Err(Error::invalid("frames", format!("{} estimated vs {} reference frames", est.len(), reference.len())));
    }
    est.iter()
        .zip(reference)
        .map(|(a, b)| {
            if a.shape() != b.shape() {
                return Err(Error::Shape { op: "pixel_error", shapes: vec![a.shape().to_vec(), b.shape().to_vec()] });
            }
            let n = a.len().max(1) as f64;
            Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
        })
        .collect()
}

pub fn pixel_error(est: &[Tensor], reference: &[Tensor]) -> Result<f64> {
    let per = pixel_error_per_frame(est, reference)?;
    Ok(mean(&per))
}

/// Joint errors of a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointError {
    pub mean: f64,
    pub per_frame: Vec<f64>,
    /// Joints skipped because they fall behind either camera.
    pub excluded: usize,
}

/// Pixel distance between the scene's joints projected under `est` and
/// under `reference`, each at its own scene time.
pub fn joint_error(est: &Trajectory, reference: &Trajectory, scene: &DynamicScene, renderer: &Renderer) -> Result<JointError> {
    if est.len() != reference.len() {
        return Err(Error::invalid("trajectory", format!("length {} vs {}", est.len(), reference.len())));
    }
    let res = renderer.resolution();
    let mut per_frame = Vec::with_capacity(est.len());
    let mut excluded = 0;
    let mut total = (0.0, 0usize);
    for (frame, (a, b)) in est.params().zip(reference.params()).enumerate() {
        let (ja, jb) = (scene.joints_3d(a.time), scene.joints_3d(b.time));
        let (pa, pb) = (a.pose(), b.pose());
        let mut sum = 0.0;
        let mut n = 0;
        for (xa, xb) in ja.iter().zip(&jb) {
            match (project(xa, &pa, a.focal, res), project(xb, &pb, b.focal, res)) {
                (Ok(u), Ok(v)) => {
                    sum += ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt();
                    n += 1;
                }
                _ => excluded += 1,
            }
        }
        if n == 0 {
            return Err(Error::invalid("joint_error", format!("every joint is behind a camera in frame {frame}")));
        }
        per_frame.push(sum / n as f64);
        total.0 += sum;
        total.1 += n;
    }
    let mean = if total.1 == 0 { 0.0 } else { total.0 / total.1 as f64 };
    Ok(JointError { mean, per_frame, excluded })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Pearson correlation of two equally long series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("series", format!("need two equal series of length >= 2, got {} and {}", a.len(), b.len())));
    }
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid("series", "constant series has no correlation"));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Camera-centre displacement from the first keyframe along the first
/// camera's viewing direction; positive moves toward the subject.
pub fn axial_displacement(t: &Trajectory) -> Vec<f64> {
    let Some(first) = t.keyframes().first() else { return Vec::new() };
    let pose = first.params.pose();
    let axis = pose.rotation.column(2).into_owned();
    t.params().map(|p| (p.pose().translation - pose.translation).dot(&axis)).collect()
}

/// Metrics of one run. Metrics are absent when the run failed or when they
/// do not apply (pixel error across scenes).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_ate: Option<f64>,
    pub pe: Option<f64>,
    pub je: Option<f64>,
    pub ate_per_frame: Vec<f64>,
    pub pe_per_frame: Vec<f64>,
    pub je_per_frame: Vec<f64>,
    pub excluded_joints: usize,
    pub success: bool,
    /// Stage and message of the failure.
    pub failure: Option<String>,
}

impl EvalReport {
    pub fn failed(stage: &str, err: &Error) -> Self {
        Self { success: false, failure: Some(format!("{stage}: {err}")), ..Default::default() }
    }

    /// Evaluates `est` against the ground truth; `frames` carries estimated
    /// and reference color frames when pixel error applies.
    pub fn evaluate(
        est: &Trajectory,
        gt: &Trajectory,
        scene: &DynamicScene,
        renderer: &Renderer,
        frames: Option<(&[Tensor], &[Tensor])>,
    ) -> Result<Self> {
        let ate_per_frame = ate_per_frame(est, gt)?;
        let je = joint_error(est, gt, scene, renderer)?;
        let pe_per_frame = match frames {
            Some((a, b)) => pixel_error_per_frame(a, b)?,
            None => Vec::new(),
        };
        Ok(Self {
            rmse_ate: Some(rmse_ate(est, gt)?),
            pe: frames.map(|_| mean(&pe_per_frame)),
            je: Some(je.mean),
            ate_per_frame,
            pe_per_frame,
            je_per_frame: je.per_frame,
            excluded_joints: je.excluded,
            success: true,
            failure: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandscapeKind {
    Pose,
    Photometric,
}

impl std::str::FromStr for LandscapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose" => Ok(Self::Pose),
            "photometric" => Ok(Self::Photometric),
            _ => Err(Error::invalid("kind", format!("unknown landscape kind {s:?}"))),
        }
    }
}

/// Loss over a grid of camera-frame translations `(dx[c], dy[r])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub kind: LandscapeKind,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    /// `raw[r][c]`; `None` where the camera left the scene or rendering failed.
    pub raw: Vec<Vec<Option<f64>>>,
    /// Min-max normalized over the present cells.
    pub normalized: Vec<Vec<Option<f64>>>,
}

impl Landscape {
    pub fn argmin(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (r, row) in self.raw.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if best.is_none_or(|(_, b)| v < b) {
                        best = Some(((r, c), v));
                    }
                }
            }
        }
        best.map(|(rc, _)| rc)
    }

    /// Cells whose normalized value is within `fraction` of the minimum.
    pub fn near_minima(&self, fraction: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, row) in self.normalized.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if v.is_some_and(|v| v <= fraction) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// The grid cell whose offset is zero, or the one closest to it.
    pub fn center(&self) -> (usize, usize) {
        let closest = |v: &[f64]| {
            v.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(i, _)| i).unwrap_or(0)
        };
        (closest(&self.dy), closest(&self.dx))
    }
}

/// Evaluates `kind` at `gt` shifted by every `(dx, dy)` camera-frame
/// translation, rendering in `renderer`'s scene against `reference`.
pub fn landscape_probe(
    kind: LandscapeKind,
    renderer: &Renderer,
    reference: &ReferenceFrame,
    gt: &CinematicParams,
    dx: &[f64],
    dy: &[f64],
    ot: &OTConfig,
    heatmap: &HeatmapConfig,
) -> Result<Landscape> {
    if dx.is_empty() || dy.is_empty() || dx.iter().chain(dy).any(|d| !d.is_finite()) {
        return Err(Error::invalid("deltas", "need a non-empty finite grid"));
    }
    let target = match kind {
        LandscapeKind::Pose => Some(PoseTarget::new(&reference.heatmaps, ot)?),
        LandscapeKind::Photometric => {
            if reference.color.is_none() {
                return Err(Error::invalid("reference", "photometric landscape needs reference colors"));
            }
            None
        }
    };
    let eval = |p: &CinematicParams| -> Result<f64> {
        let c = p.pose().translation;
        if !renderer.scene().contains(&c) {
            return Err(Error::OutOfBounds { position: [c.x, c.y, c.z] });
        }
        match (&target, &reference.color) {
            (Some(t), _) => t.loss(&render_heatmaps(renderer, heatmap, p)?),
            (None, Some(color)) => photometric_loss(color, &renderer.render(p)?.color),
            (None, None) => unreachable!("checked above"),
        }
    };
    let raw: Vec<Vec<Option<f64>>> = dy
        .iter()
        .map(|&y| {
            dx.iter()
                .map(|&x| {
                    let mut xi = gt.xi;
                    xi[3] += x;
                    xi[4] += y;
                    eval(&CinematicParams { xi, ..*gt }.reanchored()).ok().filter(|v| v.is_finite())
                })
                .collect()
        })
        .collect();
    let present = raw.iter().flatten().flatten();
    let lo = present.clone().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = present.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let span = hi - lo;
    let normalized = raw
        .iter()
        .map(|row| row.iter().map(|v| v.map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })).collect())
        .collect();
    Ok(Landscape { kind, dx: dx.to_vec(), dy: dy.to_vec(), raw, normalized })
}

/// `n` evenly spaced offsets over `[-extent, extent]`.
pub fn symmetric_offsets(n: usize, extent: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    let mid = (n - 1) as f64 / 2.0;
    (0..n).map(|i| (i as f64 - mid) / mid * extent).collect()
}
