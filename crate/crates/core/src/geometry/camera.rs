//! Pinhole camera with the principal point at the image center.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::params::CinematicParams;
use super::se3::{compose_increment, SE3Pose};
use crate::diffcore::{matvec, matvec_t, sub3, Real, V3};
use crate::error::{Error, Result};

/// Minimum camera-frame depth accepted by [`project`].
pub const Z_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn diagonal(&self) -> f64 {
        ((self.height * self.height + self.width * self.width) as f64).sqrt()
    }

    /// Continuous coordinates `(u, v)` of the center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [col as f64 + 0.5, row as f64 + 0.5]
    }
}

impl std::str::FromStr for Resolution {
    type Err = Error;

    /// Parses `HxW`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| Error::Parse(format!("resolution {s:?}, expected HxW")))?;
        let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| Error::Parse(format!("resolution {s:?}: {e}")));
        let (h, w) = (parse(h)?, parse(w)?);
        if h == 0 || w == 0 {
            return Err(Error::invalid("resolution", "dimensions must be positive"));
        }
        Ok(Self::new(h, w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

/// Camera whose pose and focal length may carry derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Camera<T: Real> {
    /// Row-major camera-to-world rotation.
    pub rotation: [[T; 3]; 3],
    pub center: V3<T>,
    pub focal: T,
    pub resolution: Resolution,
}

impl<T: Real> Camera<T> {
    /// Camera for `base ∘ exp(xi)` from a packed `[xi(6), focal, time]` vector.
    pub fn from_packed(base: &SE3Pose, packed: &[T; 8], resolution: Resolution) -> Self {
        let xi = [packed[0], packed[1], packed[2], packed[3], packed[4], packed[5]];
        let (rotation, center) = compose_increment(base, &xi);
        Self { rotation, center, focal: packed[6], resolution }
    }

    pub fn to_camera_frame(&self, x: V3<T>) -> V3<T> {
        matvec_t(&self.rotation, sub3(x, self.center))
    }

    /// Pixel coordinates of a camera-frame point, or `None` behind `Z_MIN`.
    pub fn project_camera_point(&self, xc: V3<T>) -> Option<[T; 2]> {
        if xc[2].value() <= Z_MIN {
            return None;
        }
        let inv = T::one() / xc[2];
        let (cx, cy) = (self.resolution.width as f64 / 2.0, self.resolution.height as f64 / 2.0);
        Some([self.focal * xc[0] * inv + cx, self.focal * xc[1] * inv + cy])
    }

    pub fn project(&self, x: V3<T>) -> Option<[T; 2]> {
        self.project_camera_point(self.to_camera_frame(x))
    }

    /// Unit world-space direction through continuous pixel `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> V3<T> {
        let (cx, cy) = (self.resolution.width as f64 / 2.0, self.resolution.height as f64 / 2.0);
        let inv_f = T::one() / self.focal;
        let dc = [inv_f * (u - cx), inv_f * (v - cy), T::one()];
        let norm = (dc[0] * dc[0] + dc[1] * dc[1] + T::one()).sqrt();
        let d = matvec(&self.rotation, dc);
        [d[0] / norm, d[1] / norm, d[2] / norm]
    }
}

impl Camera<f64> {
    pub fn from_params(params: &CinematicParams, resolution: Resolution) -> Self {
        Self::from_packed(&params.base, &params.packed(), resolution)
    }
}

/// Pinhole projection `u = φ x/z + W/2`, `v = φ y/z + H/2`.
pub fn project(point: &Vector3<f64>, pose: &SE3Pose, focal: f64, resolution: Resolution) -> Result<[f64; 2]> {
    let xc = pose.rotation.transpose() * (point - pose.translation);
    if xc.z <= Z_MIN {
        return Err(Error::BehindCamera { depth: xc.z, z_min: Z_MIN });
    }
    Ok([
        focal * xc.x / xc.z + resolution.width as f64 / 2.0,
        focal * xc.y / xc.z + resolution.height as f64 / 2.0,
    ])
}

/// Ray through continuous pixel coordinates `pixel = (u, v)`.
pub fn generate_ray(pixel: [f64; 2], pose: &SE3Pose, focal: f64, resolution: Resolution) -> Ray {
    let dc = Vector3::new(
        (pixel[0] - resolution.width as f64 / 2.0) / focal,
        (pixel[1] - resolution.height as f64 / 2.0) / focal,
        1.0,
    );
    Ray { origin: pose.translation, direction: (pose.rotation * dc).normalize() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{central_difference, relative_error, Jet};
    use crate::geometry::se3_exp;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RES: Resolution = Resolution::new(64, 64);

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project(&Vector3::new(0.0, 0.0, 5.0), &SE3Pose::identity(), 80.0, RES).unwrap();
        assert_eq!(p, [32.0, 32.0]);
    }

    #[test]
    fn doubling_focal_doubles_offset() {
        let x = Vector3::new(0.3, -0.2, 2.0);
        let a = project(&x, &SE3Pose::identity(), 50.0, RES).unwrap();
        let b = project(&x, &SE3Pose::identity(), 100.0, RES).unwrap();
        assert_relative_eq!(b[0] - 32.0, 2.0 * (a[0] - 32.0), epsilon = 1e-12);
        assert_relative_eq!(b[1] - 32.0, 2.0 * (a[1] - 32.0), epsilon = 1e-12);
    }

    #[test]
    fn worked_pinhole_example() {
        let p = project(&Vector3::new(1.0, 0.0, 2.0), &SE3Pose::identity(), 100.0, RES).unwrap();
        assert_eq!(p, [82.0, 32.0]);
    }

    #[test]
    fn behind_camera_errors() {
        let r = project(&Vector3::new(0.0, 0.0, -1.0), &SE3Pose::identity(), 100.0, RES);
        assert!(matches!(r, Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn principal_ray_and_origin() {
        let ray = generate_ray([32.0, 32.0], &SE3Pose::identity(), 60.0, RES);
        assert_eq!(ray.origin, Vector3::zeros());
        assert_relative_eq!(ray.direction, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn ray_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = se3_exp(&[0.1, -0.2, 0.3, 1.0, 0.5, -2.0]);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let px = [rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)];
            let ray = generate_ray(px, &pose, 70.0, RES);
            assert_relative_eq!(ray.direction.norm(), 1.0, epsilon = 1e-12);
            let t = rng.gen_range(0.5..20.0);
            let back = project(&(ray.origin + ray.direction * t), &pose, 70.0, RES).unwrap();
            worst = worst.max((back[0] - px[0]).abs()).max((back[1] - px[1]).abs());
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn projection_focal_derivative_matches_fd() {
        let base = se3_exp(&[0.05, 0.1, -0.02, 0.2, 0.1, -3.0]);
        let x = [0.4, -0.3, 1.0];
        let packed: [Jet<8>; 8] =
            std::array::from_fn(|i| Jet::var([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 60.0, 0.5][i], i));
        let cam = Camera::from_packed(&base, &packed, RES);
        let p = cam.project([Jet::constant(x[0]), Jet::constant(x[1]), Jet::constant(x[2])]).unwrap();
        for k in 0..2 {
            let fd = central_difference(
                &mut |f| Ok(project(&Vector3::from(x), &base, f[0], RES).unwrap()[k]),
                &[60.0],
                1e-4,
            )
            .unwrap();
            assert!(relative_error(&[p[k].d[6]], &fd) < 1e-6);
        }
    }
}
