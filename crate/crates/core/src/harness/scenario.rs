use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::motion::MotionSpec;
use crate::error::{Error, Result};
use crate::geometry::{CinematicParams, Resolution, SE3Pose};
use crate::optimizer::{LossArm, OptimConfig};
use crate::renderer::{QuadratureConfig, Renderer};
use crate::scene::{preset, DynamicScene, PRESET_NAMES};

/// How the first camera is initialized relative to ground-truth frame 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    Same,
    /// Camera centre moved by `translation` × scene diameter along a random
    /// direction and rotated by `rotation_deg` about a random axis.
    Perturbed { translation: f64, rotation_deg: f64 },
    /// Uniform position inside the scene bounds shrunk by `margin`, looking
    /// at the motion target.
    RandomInBounds {
        #[serde(default = "default_margin")]
        margin: f64,
    },
}

fn default_margin() -> f64 {
    0.3
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Perturbed { translation, rotation_deg } if !(translation >= 0.0 && rotation_deg >= 0.0) => {
                Err(Error::invalid("init", "perturbation magnitudes must be non-negative"))
            }
            Self::RandomInBounds { margin } if !(margin >= 0.0) => Err(Error::invalid("init.margin", "must be non-negative")),
            _ => Ok(()),
        }
    }

    /// Initial camera for a clip whose first ground-truth camera is `gt`.
    pub fn resolve(&self, gt: &CinematicParams, scene: &DynamicScene, target: [f64; 3], seed: u64) -> Result<CinematicParams> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a17);
        let init = match *self {
            Self::Same => *gt,
            Self::Perturbed { translation, rotation_deg } => {
                let dir = unit_vector(&mut rng);
                let axis = unit_vector(&mut rng);
                let pose = gt.pose();
                let turn = UnitQuaternion::from_scaled_axis(axis * rotation_deg.to_radians()).to_rotation_matrix().into_inner();
                let centre = pose.translation + dir * translation * scene.diameter();
                CinematicParams::new(SE3Pose::new(turn * pose.rotation, centre), gt.focal, gt.time)
            }
            Self::RandomInBounds { margin } => {
                let (lo, hi) = scene.bounds();
                let t = Vector3::from(target);
                let mut eye;
                // Reject spots too close to the target to frame it.
                loop {
                    eye = Vector3::from_fn(|i, _| {
                        let (a, b) = (lo[i] + margin, hi[i] - margin);
                        if a < b {
                            rng.gen_range(a..b)
                        } else {
                            0.5 * (lo[i] + hi[i])
                        }
                    });
                    if (eye - t).norm() > 1.0 {
                        break;
                    }
                }
                CinematicParams::new(SE3Pose::look_at(eye, t, Vector3::y()), gt.focal, gt.time)
            }
        };
        let c = init.pose().translation;
        if !scene.contains(&c) {
            return Err(Error::OutOfBounds { position: [c.x, c.y, c.z] });
        }
        Ok(init)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Built-in preset name or path to a scene TOML file.
pub fn load_scene(id: &str, base_dir: Option<&Path>) -> Result<DynamicScene> {
    if PRESET_NAMES.contains(&id) {
        return preset(id);
    }
    let path = match base_dir {
        Some(dir) if Path::new(id).is_relative() => dir.join(id),
        _ => PathBuf::from(id),
    };
    DynamicScene::load(&path)
}

/// One experiment: a reference clip rendered in one scene and transferred
/// into another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_scene")]
    pub reference_scene: String,
    #[serde(default = "default_scene")]
    pub target_scene: String,
    /// `HxW`.
    #[serde(default = "default_resolution")]
    pub resolution: String,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    pub motion: MotionSpec,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    /// Overrides `optim.arm`.
    #[serde(default = "default_arm")]
    pub arm: LossArm,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_scene() -> String {
    "scene_a".into()
}
fn default_resolution() -> String {
    "64x64".into()
}
fn default_init() -> InitSpec {
    InitSpec::Same
}
fn default_arm() -> LossArm {
    LossArm::FlowPose
}

impl Scenario {
    pub fn new(name: &str, motion: MotionSpec) -> Self {
        Self {
            name: name.into(),
            reference_scene: default_scene(),
            target_scene: default_scene(),
            resolution: default_resolution(),
            quadrature: QuadratureConfig::default(),
            motion,
            init: default_init(),
            arm: default_arm(),
            optim: OptimConfig::default(),
            seed: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn resolution(&self) -> Result<Resolution> {
        self.resolution.parse()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::invalid("name", "must be a non-empty file-name-safe string"));
        }
        let res = self.resolution()?;
        self.optim.ot.pool_factor(res.height, res.width)?;
        self.quadrature.validate()?;
        self.motion.validate()?;
        self.init.validate()?;
        self.optim_config().validate()
    }

    /// Optimizer settings with the scenario's arm and seed applied.
    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig { arm: self.arm, seed: self.seed, ..self.optim.clone() }
    }

    pub fn same_scene(&self) -> bool {
        self.reference_scene == self.target_scene
    }

    /// Reference-side and target-side renderers; scene paths resolve
    /// relative to `base_dir`.
    pub fn renderers(&self, base_dir: Option<&Path>) -> Result<(Renderer, Renderer)> {
        let res = self.resolution()?;
        let reference = Arc::new(load_scene(&self.reference_scene, base_dir)?);
        let target = if self.same_scene() { reference.clone() } else { Arc::new(load_scene(&self.target_scene, base_dir)?) };
        Ok((Renderer::new(reference, res, self.quadrature)?, Renderer::new(target, res, self.quadrature)?))
    }
}
