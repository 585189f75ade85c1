//! SE(3) exponential map and rigid poses.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::diffcore::{matmul3, matvec, Real, V3};

/// Camera-to-world rigid transform: `x_world = R x_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Camera at `eye` looking at `target`. Camera axes are x right, y down,
    /// z forward; `up` is the world up direction.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self { rotation, translation: eye }
    }

    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ exp(xi)`; returns `self` unchanged for a zero increment.
    pub fn apply_increment(&self, xi: &[f64; 6]) -> SE3Pose {
        if xi.iter().all(|&v| v == 0.0) {
            return *self;
        }
        self.compose(&se3_exp(xi))
    }

    /// Re-orthonormalizes the rotation (polar projection via quaternion).
    pub fn orthonormalized(&self) -> SE3Pose {
        // Closed-form extraction; the iterative polar fit stalls at half turns.
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        SE3Pose { rotation: *q.to_rotation_matrix().matrix(), translation: self.translation }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn rotation_rows(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]]
    }

    /// Rotation angle between two poses, radians.
    pub fn angle_to(&self, other: &SE3Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

fn hat<T: Real>(w: V3<T>) -> [[T; 3]; 3] {
    let z = T::zero();
    [[z, -w[2], w[1]], [w[2], z, -w[0]], [-w[1], w[0], z]]
}

/// Closed-form exponential of `xi = (ω, v)`: Rodrigues rotation and the
/// left-Jacobian `V` applied to the translation part. Returns row-major `R`
/// and `t`. Small angles use series expansions in θ² so derivatives stay
/// exact at the origin.
pub fn se3_exp_generic<T: Real>(xi: &[T; 6]) -> ([[T; 3]; 3], V3<T>) {
    let w = [xi[0], xi[1], xi[2]];
    let v = [xi[3], xi[4], xi[5]];
    let th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b, c) = if th2.value() < 1e-8 {
        let t4 = th2 * th2;
        (
            T::one() - th2 / 6.0 + t4 / 120.0,
            T::cst(0.5) - th2 / 24.0 + t4 / 720.0,
            T::cst(1.0 / 6.0) - th2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let th = th2.sqrt();
        let (s, co) = (th.sin(), th.cos());
        (s / th, (T::one() - co) / th2, (th - s) / (th2 * th))
    };
    let k = hat(w);
    let k2 = matmul3(&k, &k);
    let mut r = [[T::zero(); 3]; 3];
    let mut vm = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { T::one() } else { T::zero() };
            r[i][j] = id + k[i][j] * a + k2[i][j] * b;
            vm[i][j] = id + k[i][j] * b + k2[i][j] * c;
        }
    }
    (r, matvec(&vm, v))
}

pub fn se3_exp(xi: &[f64; 6]) -> SE3Pose {
    let (r, t) = se3_exp_generic(xi);
    SE3Pose {
        rotation: Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]),
        translation: Vector3::new(t[0], t[1], t[2]),
    }
}

/// `base ∘ exp(xi)` with a differentiable increment.
pub fn compose_increment<T: Real>(base: &SE3Pose, xi: &[T; 6]) -> ([[T; 3]; 3], V3<T>) {
    let (r, t) = se3_exp_generic(xi);
    let rb = base.rotation_rows().map(|row| row.map(T::cst));
    let tb = [T::cst(base.translation.x), T::cst(base.translation.y), T::cst(base.translation.z)];
    let rot = matmul3(&rb, &r);
    let tr = matvec(&rb, t);
    (rot, [tr[0] + tb[0], tr[1] + tb[1], tr[2] + tb[2]])
}
