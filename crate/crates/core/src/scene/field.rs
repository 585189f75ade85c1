//! Density and color field evaluation.

use nalgebra::Vector3;

use super::config::{BlobConfig, BoneConfig, SlabConfig};
use crate::diffcore::{dot3, lerp3, sub3, v3, Real, V3};

/// Tails beyond this many length scales are treated as exactly zero
/// (`exp(-28) < 1e-12`).
pub(crate) const CUTOFF: f64 = 7.5;
const LOGISTIC_CUTOFF: f64 = 28.0;

/// Region outside of which a primitive contributes nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Sphere { center: Vector3<f64>, radius: f64 },
    Box { min: Vector3<f64>, max: Vector3<f64> },
}

impl Support {
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        match self {
            Support::Sphere { center, radius } => (x - center).norm_squared() <= radius * radius,
            Support::Box { min, max } => (0..3).all(|k| x[k] >= min[k] && x[k] <= max[k]),
        }
    }

    /// Parameter interval where `origin + t * dir` lies inside the support.
    pub fn ray_interval(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        match self {
            Support::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Support::Box { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if dir[k].abs() < 1e-15 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[k];
                    let (a, b) = ((min[k] - origin[k]) * inv, (max[k] - origin[k]) * inv);
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 <= t1).then_some((t0, t1))
            }
        }
    }
}

pub(crate) fn blob_support(b: &BlobConfig) -> Support {
    let r = CUTOFF * b.sigma.iter().cloned().fold(0.0, f64::max);
    Support::Sphere { center: Vector3::from(b.center), radius: r }
}

pub(crate) fn slab_support(s: &SlabConfig) -> Support {
    let pad = LOGISTIC_CUTOFF * s.softness;
    Support::Box {
        min: Vector3::from(s.min) - Vector3::repeat(pad),
        max: Vector3::from(s.max) + Vector3::repeat(pad),
    }
}

pub(crate) fn bone_support(a: &Vector3<f64>, b: &Vector3<f64>, radius: f64) -> Support {
    Support::Sphere { center: (a + b) * 0.5, radius: (b - a).norm() * 0.5 + CUTOFF * radius }
}

pub(crate) fn blob_density<T: Real>(b: &BlobConfig, x: V3<T>) -> T {
    let mut q = T::zero();
    for k in 0..3 {
        let d = (x[k] - b.center[k]) / b.sigma[k];
        q += d * d;
    }
    (q * -0.5).exp() * b.density
}

#[inline]
fn logistic<T: Real>(z: T) -> T {
    T::one() / ((-z).exp() + 1.0)
}

pub(crate) fn slab_density<T: Real>(s: &SlabConfig, x: V3<T>) -> T {
    let mut v = T::cst(s.density);
    for k in 0..3 {
        v *= logistic((x[k] - s.min[k]) / s.softness) * logistic((-x[k] + s.max[k]) / s.softness);
    }
    v
}

/// Closest-point parameter `s ∈ [0, 1]` on segment `a→b` and squared distance.
pub(crate) fn point_segment<T: Real>(x: V3<T>, a: V3<T>, b: V3<T>) -> (T, T) {
    let ab = sub3(b, a);
    let len2 = dot3(ab, ab);
    let mut s = if len2.value() > 0.0 { dot3(sub3(x, a), ab) / len2 } else { T::zero() };
    if s.value() < 0.0 {
        s = T::zero();
    } else if s.value() > 1.0 {
        s = T::one();
    }
    let c = lerp3(a, b, s);
    let d = sub3(x, c);
    (s, dot3(d, d))
}

pub(crate) fn bone_density<T: Real>(bone: &BoneConfig, x: V3<T>, a: V3<T>, b: V3<T>) -> T {
    let (_, d2) = point_segment(x, a, b);
    (d2 * (-0.5 / (bone.radius * bone.radius))).exp() * bone.density
}

/// Density split into static and actor parts, plus density-weighted color.
#[derive(Debug, Clone, Copy)]
pub struct FieldSample<T: Real> {
    pub background: T,
    pub actor: T,
    /// `Σ σ_k c_k`; divide by total density for the mixture color.
    pub weighted_color: V3<T>,
}

impl<T: Real> FieldSample<T> {
    pub fn zero() -> Self {
        Self { background: T::zero(), actor: T::zero(), weighted_color: [T::zero(); 3] }
    }

    pub fn total(&self) -> T {
        self.background + self.actor
    }

    pub(crate) fn accumulate(&mut self, density: T, color: [f64; 3], actor: bool) {
        if actor {
            self.actor += density;
        } else {
            self.background += density;
        }
        let c: V3<T> = v3(color);
        for k in 0..3 {
            self.weighted_color[k] += c[k] * density;
        }
    }
}

/// Displacement at closest-point parameter `s` of a bone whose endpoints
/// move `a0→a1` and `b0→b1`.
pub(crate) fn displacement<T: Real>(a0: V3<T>, a1: V3<T>, b0: V3<T>, b1: V3<T>, s: T) -> V3<T> {
    let da = sub3(a1, a0);
    let db = sub3(b1, b0);
    lerp3(da, db, s)
}
