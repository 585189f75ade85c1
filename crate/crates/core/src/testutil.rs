//! Small scenes and cameras shared by unit tests.

use std::sync::Arc;

use nalgebra::Vector3;

use crate::geometry::{CinematicParams, Resolution, SE3Pose};
use crate::renderer::{QuadratureConfig, Renderer};
use crate::scene::{
    preset, ActorConfig, BlobConfig, BoneConfig, BoundsConfig, DynamicScene, SceneConfig, SlabConfig, SCHEMA_VERSION,
};

/// Scene whose actor is a single bone parked far outside any test view
/// unless `joints` are given.
pub fn scene(blobs: Vec<BlobConfig>, slabs: Vec<SlabConfig>, joints: Option<Vec<Vec<[f64; 3]>>>) -> DynamicScene {
    let keyframes = joints.unwrap_or_else(|| vec![vec![[15.0, 15.0, -15.0], [15.0, 15.5, -15.0]]; 2]);
    let j = keyframes[0].len();
    let times = (0..keyframes.len()).map(|k| k as f64 / (keyframes.len() - 1) as f64).collect();
    DynamicScene::build(SceneConfig {
        schema_version: SCHEMA_VERSION,
        name: "test".into(),
        background_color: [0.2, 0.4, 0.6],
        bounds: BoundsConfig { min: [-20.0; 3], max: [20.0; 3] },
        blobs,
        slabs,
        actor: ActorConfig {
            joint_names: (0..j).map(|i| format!("j{i}")).collect(),
            times,
            keyframes,
            bones: vec![BoneConfig { joints: [0, j - 1], radius: 0.05, density: 1.0, color: [1.0; 3] }],
        },
    })
    .unwrap()
}

/// Fronto-parallel wall facing the identity camera, front face at `z`.
pub fn wall(z: f64, density: f64) -> SlabConfig {
    SlabConfig { min: [-15.0, -15.0, z], max: [15.0, 15.0, z + 1.0], softness: 0.02, density, color: [0.5, 0.6, 0.7] }
}

pub fn renderer(scene: DynamicScene, res: Resolution, quad: QuadratureConfig) -> Renderer {
    Renderer::new(Arc::new(scene), res, quad).unwrap()
}

pub fn preset_renderer(name: &str, res: Resolution) -> Renderer {
    Renderer::new(Arc::new(preset(name).unwrap()), res, QuadratureConfig::default()).unwrap()
}

pub fn identity_camera(focal: f64, time: f64) -> CinematicParams {
    CinematicParams::new(SE3Pose::identity(), focal, time)
}

/// Camera looking at the preset actor from the front.
pub fn front_view(focal: f64, time: f64) -> CinematicParams {
    let pose = SE3Pose::look_at(Vector3::new(0.0, 1.1, -3.0), Vector3::new(0.0, 1.0, 0.0), Vector3::y());
    CinematicParams::new(pose, focal, time)
}
