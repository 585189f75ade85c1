use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CinematicParams, SE3Pose, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    PushIn,
    Arc,
    DollyZoom,
    HandheldJitter,
    TimeOnly,
    FocalOnly,
}

impl MotionKind {
    pub const ALL: [MotionKind; 6] =
        [Self::PushIn, Self::Arc, Self::DollyZoom, Self::HandheldJitter, Self::TimeOnly, Self::FocalOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::PushIn => "push-in",
            Self::Arc => "arc",
            Self::DollyZoom => "dolly-zoom",
            Self::HandheldJitter => "handheld-jitter",
            Self::TimeOnly => "time-only",
            Self::FocalOnly => "focal-only",
        }
    }
}

impl std::str::FromStr for MotionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("motion.kind", format!("unknown motion {s:?}")))
    }
}

/// Scripted ground-truth camera path around a look-at target.
///
/// The camera sits `distance` from `target` at azimuth `azimuth_deg`
/// (0 looks along +z) and height `height`. Fields left unset take
/// kind-specific defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub kind: MotionKind,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_target")]
    pub target: [f64; 3],
    #[serde(default = "default_distance")]
    pub distance: f64,
    /// Push-in: 0.7·distance. Dolly-zoom: 1.4·distance.
    #[serde(default)]
    pub distance_end: Option<f64>,
    #[serde(default)]
    pub azimuth_deg: f64,
    /// Arc: azimuth + 30.
    #[serde(default)]
    pub azimuth_end_deg: Option<f64>,
    #[serde(default = "default_height")]
    pub height: f64,
    #[serde(default = "default_focal")]
    pub focal: f64,
    /// Focal-only: 1.5·focal. Dolly-zoom keeps the target's image size.
    #[serde(default)]
    pub focal_end: Option<f64>,
    /// Scene time at the first and last frame; focal-only holds the first.
    #[serde(default = "default_time")]
    pub time: [f64; 2],
    /// Handheld jitter amplitude in scene units and degrees.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_jitter_deg")]
    pub jitter_deg: f64,
}

fn default_frames() -> usize {
    20
}
fn default_target() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}
fn default_distance() -> f64 {
    3.0
}
fn default_height() -> f64 {
    1.1
}
fn default_focal() -> f64 {
    60.0
}
fn default_time() -> [f64; 2] {
    [0.2, 0.6]
}
fn default_jitter() -> f64 {
    0.03
}
fn default_jitter_deg() -> f64 {
    0.8
}

impl MotionSpec {
    pub fn new(kind: MotionKind) -> Self {
        Self {
            kind,
            frames: default_frames(),
            target: default_target(),
            distance: default_distance(),
            distance_end: None,
            azimuth_deg: 0.0,
            azimuth_end_deg: None,
            height: default_height(),
            focal: default_focal(),
            focal_end: None,
            time: default_time(),
            jitter: default_jitter(),
            jitter_deg: default_jitter_deg(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid("motion.frames", "need at least two frames"));
        }
        if !(self.distance > 0.0) || self.distance_end.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::invalid("motion.distance", "must be positive"));
        }
        if !(self.focal > 0.0) || self.focal_end.is_some_and(|f| !(f > 0.0)) {
            return Err(Error::invalid("motion.focal", "must be positive"));
        }
        if self.time.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("motion.time", "must lie in [0, 1]"));
        }
        if !(self.jitter >= 0.0 && self.jitter_deg >= 0.0) {
            return Err(Error::invalid("motion.jitter", "must be non-negative"));
        }
        Ok(())
    }

    fn camera(&self, azimuth_deg: f64, distance: f64, focal: f64, time: f64) -> CinematicParams {
        let a = azimuth_deg.to_radians();
        let t = Vector3::from(self.target);
        let eye = Vector3::new(t.x + distance * a.sin(), self.height, t.z - distance * a.cos());
        CinematicParams::new(SE3Pose::look_at(eye, t, Vector3::y()), focal, time)
    }

    /// Ground-truth keyframes; `seed` only affects handheld jitter.
    pub fn trajectory(&self, seed: u64) -> Result<Trajectory> {
        self.validate()?;
        let n = self.frames;
        let lerp = |a: f64, b: f64, s: f64| a + (b - a) * s;
        // Sum-of-sines shake with random phases and frequencies.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = Uniform::new(0.0, 2.0 * PI);
        let freq = Uniform::new(1.0, 3.0);
        let waves: Vec<(f64, f64)> = (0..6).map(|_| (freq.sample(&mut rng), phase.sample(&mut rng))).collect();
        let params = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let time = lerp(self.time[0], self.time[1], s);
                match self.kind {
                    MotionKind::PushIn => {
                        let d = lerp(self.distance, self.distance_end.unwrap_or(0.7 * self.distance), s);
                        self.camera(self.azimuth_deg, d, self.focal, time)
                    }
                    MotionKind::Arc => {
                        let a = lerp(self.azimuth_deg, self.azimuth_end_deg.unwrap_or(self.azimuth_deg + 30.0), s);
                        self.camera(a, self.distance, self.focal, time)
                    }
                    MotionKind::DollyZoom => {
                        let d = lerp(self.distance, self.distance_end.unwrap_or(1.4 * self.distance), s);
                        let f = self.focal_end.map_or(self.focal * d / self.distance, |fe| lerp(self.focal, fe, s));
                        self.camera(self.azimuth_deg, d, f, time)
                    }
                    MotionKind::HandheldJitter => {
                        let mut p = self.camera(self.azimuth_deg, self.distance, self.focal, time);
                        let w = |k: usize| (2.0 * PI * waves[k].0 * s + waves[k].1).sin();
                        let shift = Vector3::new(w(0), w(1), w(2)) * self.jitter;
                        let turn = Vector3::new(w(3), w(4), w(5)) * self.jitter_deg.to_radians();
                        let r = UnitQuaternion::from_scaled_axis(turn).to_rotation_matrix().into_inner();
                        p.base = SE3Pose::new(p.base.rotation * r, p.base.translation + shift);
                        p
                    }
                    MotionKind::TimeOnly => self.camera(self.azimuth_deg, self.distance, self.focal, time),
                    MotionKind::FocalOnly => {
                        let f = lerp(self.focal, self.focal_end.unwrap_or(1.5 * self.focal), s);
                        self.camera(self.azimuth_deg, self.distance, f, self.time[0])
                    }
                }
            })
            .collect();
        Ok(Trajectory::from_params(params))
    }
}
