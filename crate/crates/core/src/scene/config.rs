//! Serializable scene description (`schema_version = 1`).

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub schema_version: u32,
    pub name: String,
    /// Color returned where a ray accumulates no density.
    pub background_color: [f64; 3],
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub blobs: Vec<BlobConfig>,
    #[serde(default)]
    pub slabs: Vec<SlabConfig>,
    pub actor: ActorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Axis-aligned Gaussian density blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobConfig {
    pub center: [f64; 3],
    pub sigma: [f64; 3],
    pub density: f64,
    pub color: [f64; 3],
}

/// Axis-aligned box with logistic edges of width `softness`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlabConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub softness: f64,
    pub density: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub joint_names: Vec<String>,
    /// Keyframe times, strictly increasing from 0 to 1.
    pub times: Vec<f64>,
    /// `keyframes[k][j]` is joint `j` at `times[k]`.
    pub keyframes: Vec<Vec<[f64; 3]>>,
    pub bones: Vec<BoneConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneConfig {
    pub joints: [usize; 2],
    pub radius: f64,
    pub density: f64,
    pub color: [f64; 3],
}

impl SceneConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene config serializes")
    }

    pub fn from_toml(text: &str) -> crate::Result<Self> {
        toml::from_str(text).map_err(|e| crate::Error::Parse(format!("scene config: {e}")))
    }
}
