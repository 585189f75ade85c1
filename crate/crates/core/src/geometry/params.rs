use serde::{Deserialize, Serialize};

use super::se3::SE3Pose;
use crate::error::{Error, Result};

/// Number of scalars optimized per camera: six pose increments, focal, time.
pub const PARAMS_PER_CAMERA: usize = 8;

/// One camera's cinematic unknowns: a local se(3) increment `xi` about
/// `base`, the focal length in pixels and the normalized scene time `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CinematicParams {
    pub base: SE3Pose,
    /// Rotation (radians) then translation (scene units).
    pub xi: [f64; 6],
    pub focal: f64,
    pub time: f64,
}

impl CinematicParams {
    pub fn new(pose: SE3Pose, focal: f64, time: f64) -> Self {
        Self { base: pose, xi: [0.0; 6], focal, time }
    }

    pub fn pose(&self) -> SE3Pose {
        self.base.apply_increment(&self.xi)
    }

    /// `[xi(6), focal, time]`.
    pub fn packed(&self) -> [f64; PARAMS_PER_CAMERA] {
        let x = &self.xi;
        [x[0], x[1], x[2], x[3], x[4], x[5], self.focal, self.time]
    }

    pub fn with_packed(&self, p: &[f64]) -> Self {
        Self { base: self.base, xi: [p[0], p[1], p[2], p[3], p[4], p[5]], focal: p[6], time: p[7] }
    }

    /// Folds the increment into the base pose and resets it to zero.
    pub fn reanchored(&self) -> Self {
        Self { base: self.pose().orthonormalized(), xi: [0.0; 6], focal: self.focal, time: self.time }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::invalid("focal", format!("must be positive, got {}", self.focal)));
        }
        if !(0.0..=1.0).contains(&self.time) {
            return Err(Error::OutOfRange { what: "time", value: self.time, lo: 0.0, hi: 1.0 });
        }
        if self.xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("xi", "non-finite increment"));
        }
        Ok(())
    }
}
