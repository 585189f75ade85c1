use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::params::CinematicParams;
use super::se3::SE3Pose;
use crate::error::{Error, Result};

pub const EXPORT_HEADER: &str = "# cinetransfer trajectory v1\n\
# frame r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz focal_px time_m\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub params: CinematicParams,
}

/// Keyframed camera path with strictly increasing frame indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    keyframes: Vec<Keyframe>,
}

impl Trajectory {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self> {
        if keyframes.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(Error::invalid("trajectory", "frame indices must be strictly increasing"));
        }
        Ok(Self { keyframes })
    }

    /// Frames numbered `0..params.len()`.
    pub fn from_params(params: Vec<CinematicParams>) -> Self {
        Self { keyframes: params.into_iter().enumerate().map(|(frame, params)| Keyframe { frame, params }).collect() }
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn params(&self) -> impl Iterator<Item = &CinematicParams> {
        self.keyframes.iter().map(|k| &k.params)
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    /// Parameters at continuous frame index `t`: slerp on rotation, linear on
    /// translation, focal and time. Exact at keyframes.
    pub fn interpolate(&self, t: f64) -> Result<CinematicParams> {
        let (first, last) = match (self.keyframes.first(), self.keyframes.last()) {
            (Some(f), Some(l)) => (f.frame as f64, l.frame as f64),
            _ => return Err(Error::invalid("trajectory", "empty")),
        };
        if !(first..=last).contains(&t) {
            return Err(Error::OutOfRange { what: "frame index", value: t, lo: first, hi: last });
        }
        let i = self.keyframes.partition_point(|k| (k.frame as f64) <= t).saturating_sub(1);
        let a = &self.keyframes[i];
        if a.frame as f64 == t || i + 1 == self.keyframes.len() {
            return Ok(a.params);
        }
        let b = &self.keyframes[i + 1];
        let w = (t - a.frame as f64) / (b.frame - a.frame) as f64;
        let (pa, pb) = (a.params.pose(), b.params.pose());
        let q = pa.quaternion().slerp(&pb.quaternion(), w);
        let pose = SE3Pose::new(*q.to_rotation_matrix().matrix(), pa.translation.lerp(&pb.translation, w));
        let lerp = |x: f64, y: f64| x + (y - x) * w;
        Ok(CinematicParams::new(pose, lerp(a.params.focal, b.params.focal), lerp(a.params.time, b.params.time)))
    }

    /// Resamples to `multiplier` frames per keyframe interval.
    pub fn resample(&self, multiplier: usize) -> Result<Trajectory> {
        if multiplier == 0 {
            return Err(Error::invalid("multiplier", "must be at least 1"));
        }
        let (Some(first), Some(last)) = (self.keyframes.first(), self.keyframes.last()) else {
            return Err(Error::invalid("trajectory", "empty"));
        };
        let span = last.frame - first.frame;
        let count = span * multiplier + 1;
        let params = (0..count)
            .map(|k| self.interpolate(first.frame as f64 + k as f64 / multiplier as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory::from_params(params))
    }

    pub fn to_export_string(&self) -> String {
        let mut out = String::from(EXPORT_HEADER);
        for k in &self.keyframes {
            let pose = k.params.pose();
            let _ = write!(out, "{}", k.frame);
            for row in pose.rotation_rows() {
                for v in row {
                    let _ = write!(out, " {v}");
                }
            }
            let t = pose.translation;
            let _ = writeln!(out, " {} {} {} {} {}", t.x, t.y, t.z, k.params.focal, k.params.time);
        }
        out
    }

    pub fn parse_export(text: &str) -> Result<Trajectory> {
        let mut keyframes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 15 {
                return Err(Error::Parse(format!("line {}: expected 15 columns, found {}", lineno + 1, fields.len())));
            }
            let frame = fields[0].parse::<usize>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let v = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1))))
                .collect::<Result<Vec<f64>>>()?;
            let rotation = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
            let params = CinematicParams::new(SE3Pose::new(rotation, Vector3::new(v[9], v[10], v[11])), v[12], v[13]);
            params.validate()?;
            keyframes.push(Keyframe { frame, params });
        }
        Trajectory::new(keyframes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_export_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Trajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_export(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn two_frames(pose_b: SE3Pose, focal: (f64, f64)) -> Trajectory {
        Trajectory::from_params(vec![
            CinematicParams::new(SE3Pose::identity(), focal.0, 0.0),
            CinematicParams::new(pose_b, focal.1, 1.0),
        ])
    }

    #[test]
    fn exact_at_keyframes() {
        let b = se3_exp(&[0.1, 0.2, 0.3, 1.0, 2.0, 3.0]);
        let tr = two_frames(b, (100.0, 200.0));
        assert_eq!(tr.interpolate(1.0).unwrap(), tr.keyframes()[1].params);
        assert_eq!(tr.interpolate(0.0).unwrap(), tr.keyframes()[0].params);
    }

    #[test]
    fn linear_focal_midpoint() {
        let tr = two_frames(SE3Pose::identity(), (100.0, 200.0));
        assert_relative_eq!(tr.interpolate(0.5).unwrap().focal, 150.0);
    }

    #[test]
    fn slerp_halves_rotation() {
        let tr = two_frames(se3_exp(&[0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0]), (100.0, 100.0));
        let mid = tr.interpolate(0.5).unwrap().pose();
        let expect = se3_exp(&[0.0, 0.0, FRAC_PI_2 / 2.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(mid.rotation, expect.rotation, epsilon = 1e-12);
    }

    #[test]
    fn continuity_near_keyframes() {
        let tr = Trajectory::from_params(vec![
            CinematicParams::new(SE3Pose::identity(), 60.0, 0.0),
            CinematicParams::new(se3_exp(&[0.2, -0.1, 0.4, 0.5, 0.1, 0.3]), 80.0, 0.5),
            CinematicParams::new(se3_exp(&[0.1, 0.3, -0.2, 1.0, 0.0, 0.0]), 70.0, 1.0),
        ]);
        for t in [0.5, 1.0, 1.5] {
            let a = tr.interpolate(t - 1e-9).unwrap();
            let b = tr.interpolate(t + 1e-9).unwrap();
            assert!((a.focal - b.focal).abs() < 1e-6);
            assert!((a.pose().translation - b.pose().translation).norm() < 1e-6);
            assert!((a.pose().rotation - b.pose().rotation).norm() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_errors() {
        let tr = two_frames(SE3Pose::identity(), (1.0, 1.0));
        assert!(tr.interpolate(1.5).is_err());
        assert!(tr.interpolate(-0.1).is_err());
    }

    #[test]
    fn rejects_non_increasing_frames() {
        let p = CinematicParams::new(SE3Pose::identity(), 1.0, 0.0);
        let r = Trajectory::new(vec![Keyframe { frame: 2, params: p }, Keyframe { frame: 2, params: p }]);
        assert!(r.is_err());
    }

    #[test]
    fn resample_counts() {
        let tr = Trajectory::from_params(
            (0..20).map(|i| CinematicParams::new(SE3Pose::identity(), 60.0, i as f64 / 19.0)).collect(),
        );
        assert_eq!(tr.resample(1).unwrap().len(), 20);
        assert_eq!(tr.resample(4).unwrap().len(), 77);
    }

    #[test]
    fn export_round_trip() {
        let tr = two_frames(se3_exp(&[0.3, -0.2, 0.1, 1.5, -0.5, 2.0]), (55.5, 61.25));
        let back = Trajectory::parse_export(&tr.to_export_string()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in tr.params().zip(back.params()) {
            assert_eq!(a.pose(), b.pose());
            assert_eq!((a.focal, a.time), (b.focal, b.time));
        }
    }

    #[test]
    fn export_rejects_short_rows() {
        assert!(Trajectory::parse_export("0 1 2 3\n").is_err());
    }
}
