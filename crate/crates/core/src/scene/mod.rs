//! Analytic dynamic scene: static Gaussian blobs and soft slabs plus an
//! articulated actor made of Gaussian capsules around keyframed bones.

mod config;
mod field;
mod presets;

use nalgebra::Vector3;

pub use config::{ActorConfig, BlobConfig, BoneConfig, BoundsConfig, SceneConfig, SlabConfig, SCHEMA_VERSION};
pub use field::{FieldSample, Support};
pub use presets::{preset, DEFAULT_JOINT_NAMES, PRESET_NAMES};

use crate::diffcore::{v3, Real, V3};
use crate::error::{Error, Result};
pub(crate) use field::displacement;
use field::{blob_density, blob_support, bone_density, bone_support, point_segment, slab_density, slab_support};

/// Density below which [`DynamicScene::sample_color`] falls back to the background color.
pub const EMPTY_DENSITY: f64 = 1e-12;

/// One density primitive of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Blob(usize),
    Slab(usize),
    Bone(usize),
}

impl Primitive {
    pub fn is_actor(self) -> bool {
        matches!(self, Primitive::Bone(_))
    }
}

/// Immutable scene built from a validated [`SceneConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicScene {
    config: SceneConfig,
    static_supports: Vec<(Primitive, Support)>,
}

fn check_color(field: &str, c: &[f64; 3]) -> Result<()> {
    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(field, format!("color components must lie in [0, 1], got {c:?}")));
    }
    Ok(())
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(field, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

fn check_nonnegative(field: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(field, format!("must be nonnegative and finite, got {v}")));
    }
    Ok(())
}

impl DynamicScene {
    pub fn build(config: SceneConfig) -> Result<Self> {
        Self::validate(&config)?;
        let mut static_supports = Vec::new();
        for (i, b) in config.blobs.iter().enumerate() {
            static_supports.push((Primitive::Blob(i), blob_support(b)));
        }
        for (i, s) in config.slabs.iter().enumerate() {
            static_supports.push((Primitive::Slab(i), slab_support(s)));
        }
        Ok(Self { config, static_supports })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::build(SceneConfig::from_toml(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn validate(c: &SceneConfig) -> Result<()> {
        if c.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", c.schema_version),
            ));
        }
        check_color("background_color", &c.background_color)?;
        let (lo, hi) = (c.bounds.min, c.bounds.max);
        if (0..3).any(|k| !(lo[k] < hi[k])) {
            return Err(Error::invalid("bounds", "min must be strictly below max on every axis"));
        }
        let inside = |p: &[f64; 3]| (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]);
        for (i, b) in c.blobs.iter().enumerate() {
            let f = |name: &str| format!("blobs[{i}].{name}");
            b.sigma.iter().try_for_each(|&s| check_positive(&f("sigma"), s))?;
            check_nonnegative(&f("density"), b.density)?;
            check_color(&f("color"), &b.color)?;
            if !inside(&b.center) {
                return Err(Error::invalid(f("center"), "outside scene bounds"));
            }
        }
        for (i, s) in c.slabs.iter().enumerate() {
            let f = |name: &str| format!("slabs[{i}].{name}");
            check_positive(&f("softness"), s.softness)?;
            check_nonnegative(&f("density"), s.density)?;
            check_color(&f("color"), &s.color)?;
            if !inside(&s.min) || !inside(&s.max) || (0..3).any(|k| s.min[k] > s.max[k]) {
                return Err(Error::invalid(f("min"), "slab must be a box inside the scene bounds"));
            }
        }
        let a = &c.actor;
        let j = a.joint_names.len();
        if j == 0 {
            return Err(Error::invalid("actor.joint_names", "at least one joint is required"));
        }
        if a.times.len() < 2 {
            return Err(Error::invalid("actor.times", "at least two keyframe times are required"));
        }
        if a.times[0] != 0.0 || *a.times.last().unwrap() != 1.0 || a.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("actor.times", "must increase strictly from 0 to 1"));
        }
        if a.keyframes.len() != a.times.len() {
            return Err(Error::invalid(
                "actor.keyframes",
                format!("{} keyframes for {} times", a.keyframes.len(), a.times.len()),
            ));
        }
        for (k, frame) in a.keyframes.iter().enumerate() {
            if frame.len() != j {
                return Err(Error::invalid(format!("actor.keyframes[{k}]"), format!("{} joints, expected {j}", frame.len())));
            }
            if let Some(p) = frame.iter().find(|p| !inside(p)) {
                return Err(Error::invalid(format!("actor.keyframes[{k}]"), format!("joint {p:?} outside scene bounds")));
            }
        }
        if a.bones.is_empty() {
            return Err(Error::invalid("actor.bones", "at least one bone is required"));
        }
        for (i, b) in a.bones.iter().enumerate() {
            let f = |name: &str| format!("actor.bones[{i}].{name}");
            if b.joints.iter().any(|&x| x >= j) {
                return Err(Error::invalid(f("joints"), format!("{:?} references a joint outside 0..{j}", b.joints)));
            }
            check_positive(&f("radius"), b.radius)?;
            check_positive(&f("density"), b.density)?;
            check_color(&f("color"), &b.color)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn joint_count(&self) -> usize {
        self.config.actor.joint_names.len()
    }

    pub fn bone_count(&self) -> usize {
        self.config.actor.bones.len()
    }

    pub fn background_color(&self) -> [f64; 3] {
        self.config.background_color
    }

    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        (Vector3::from(self.config.bounds.min), Vector3::from(self.config.bounds.max))
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|k| x[k] >= lo[k] && x[k] <= hi[k])
    }

    /// Number of static primitives (blobs and slabs).
    pub fn background_primitive_count(&self) -> usize {
        self.static_supports.len()
    }

    /// Static primitives with their supports.
    pub fn static_primitives(&self) -> &[(Primitive, Support)] {
        &self.static_supports
    }

    /// Joint positions at time `m`, linear between bracketing keyframes and
    /// exact at keyframe times. `m` is clamped to `[0, 1]`.
    pub fn joints_at<T: Real>(&self, m: T) -> Vec<V3<T>> {
        let a = &self.config.actor;
        let mv = m.value().clamp(0.0, 1.0);
        let k = a.times.partition_point(|&t| t <= mv).clamp(1, a.times.len() - 1) - 1;
        let (t0, t1) = (a.times[k], a.times[k + 1]);
        let w = if m.value() < 0.0 {
            T::zero()
        } else if m.value() > 1.0 {
            T::one()
        } else {
            (m - t0) / (t1 - t0)
        };
        let u = -w + 1.0;
        a.keyframes[k]
            .iter()
            .zip(&a.keyframes[k + 1])
            .map(|(p, q)| {
                let (p, q): (V3<T>, V3<T>) = (v3(*p), v3(*q));
                [p[0] * u + q[0] * w, p[1] * u + q[1] * w, p[2] * u + q[2] * w]
            })
            .collect()
    }

    pub fn joints_3d(&self, m: f64) -> Vec<Vector3<f64>> {
        self.joints_at(m).into_iter().map(Vector3::from).collect()
    }

    pub fn bone_joints(&self, bone: usize) -> [usize; 2] {
        self.config.actor.bones[bone].joints
    }

    /// Supports of every bone for the given (plain) joint positions.
    pub fn bone_supports(&self, joints: &[Vector3<f64>]) -> Vec<(Primitive, Support)> {
        self.config
            .actor
            .bones
            .iter()
            .enumerate()
            .map(|(i, b)| (Primitive::Bone(i), bone_support(&joints[b.joints[0]], &joints[b.joints[1]], b.radius)))
            .collect()
    }

    pub fn color_of(&self, p: Primitive) -> [f64; 3] {
        match p {
            Primitive::Blob(i) => self.config.blobs[i].color,
            Primitive::Slab(i) => self.config.slabs[i].color,
            Primitive::Bone(i) => self.config.actor.bones[i].color,
        }
    }

    /// Density of one primitive, without support culling.
    pub fn density_of<T: Real>(&self, p: Primitive, x: V3<T>, joints: &[V3<T>]) -> T {
        match p {
            Primitive::Blob(i) => blob_density(&self.config.blobs[i], x),
            Primitive::Slab(i) => slab_density(&self.config.slabs[i], x),
            Primitive::Bone(i) => {
                let b = &self.config.actor.bones[i];
                bone_density(b, x, joints[b.joints[0]], joints[b.joints[1]])
            }
        }
    }

    /// Field at `x` for the given joint positions. Primitives whose support
    /// does not contain `x` contribute exactly zero.
    pub fn sample<T: Real>(&self, x: V3<T>, joints: &[V3<T>]) -> FieldSample<T> {
        let plain: Vec<Vector3<f64>> = joints.iter().map(|j| Vector3::new(j[0].value(), j[1].value(), j[2].value())).collect();
        self.sample_with(x, joints, &self.bone_supports(&plain))
    }

    /// [`sample`](Self::sample) with bone supports precomputed by
    /// [`bone_supports`](Self::bone_supports).
    pub fn sample_with<T: Real>(&self, x: V3<T>, joints: &[V3<T>], bones: &[(Primitive, Support)]) -> FieldSample<T> {
        let xv = Vector3::new(x[0].value(), x[1].value(), x[2].value());
        let mut out = FieldSample::zero();
        for (p, s) in self.static_supports.iter().chain(bones) {
            if s.contains(&xv) {
                out.accumulate(self.density_of(*p, x, joints), self.color_of(*p), p.is_actor());
            }
        }
        out
    }

    pub fn sample_density(&self, x: &Vector3<f64>, m: f64) -> f64 {
        self.sample([x.x, x.y, x.z], &self.joints_at(m)).total()
    }

    /// Density-weighted mixture of primitive colors, or the background color
    /// where the field is empty.
    pub fn sample_color(&self, x: &Vector3<f64>, m: f64) -> [f64; 3] {
        let s = self.sample([x.x, x.y, x.z], &self.joints_at(m));
        mixture_color(&s, self.background_color())
    }

    /// Bone with the largest density at `x`, with its closest-point parameter.
    pub fn dominant_bone<T: Real>(&self, x: V3<T>, joints: &[V3<T>]) -> Option<(usize, T)> {
        let mut best: Option<(usize, T, f64)> = None;
        for (i, b) in self.config.actor.bones.iter().enumerate() {
            let (ja, jb) = (joints[b.joints[0]], joints[b.joints[1]]);
            let (s, _) = point_segment(x, ja, jb);
            let d = bone_density(b, x, ja, jb).value();
            if best.as_ref().is_none_or(|(_, _, bd)| d > *bd) {
                best = Some((i, s, d));
            }
        }
        best.map(|(i, s, _)| (i, s))
    }
}

pub fn mixture_color<T: Real>(s: &FieldSample<T>, background: [f64; 3]) -> V3<T> {
    let total = s.total();
    if total.value() < EMPTY_DENSITY {
        return v3(background);
    }
    [s.weighted_color[0] / total, s.weighted_color[1] / total, s.weighted_color[2] / total]
}
