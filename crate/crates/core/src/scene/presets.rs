//! Built-in scenes sharing one walking skeleton.

use std::f64::consts::PI;

use super::config::{ActorConfig, BlobConfig, BoneConfig, BoundsConfig, SceneConfig, SlabConfig, SCHEMA_VERSION};
use super::DynamicScene;
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 2] = ["scene_a", "scene_b"];

pub const DEFAULT_JOINT_NAMES: [&str; 13] = [
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

const BONES: [[usize; 2]; 14] = [
    [0, 1],
    [0, 2],
    [1, 2],
    [1, 3],
    [3, 5],
    [2, 4],
    [4, 6],
    [1, 7],
    [2, 8],
    [7, 8],
    [7, 9],
    [9, 11],
    [8, 10],
    [10, 12],
];

const KEYFRAMES: usize = 9;

/// Rest pose, facing `-z`, feet on the floor at `y = 0`.
const REST: [[f64; 3]; 13] = [
    [0.0, 1.62, 0.0],
    [0.2, 1.4, 0.0],
    [-0.2, 1.4, 0.0],
    [0.3, 1.12, 0.0],
    [-0.3, 1.12, 0.0],
    [0.35, 0.85, 0.0],
    [-0.35, 0.85, 0.0],
    [0.12, 0.95, 0.0],
    [-0.12, 0.95, 0.0],
    [0.13, 0.52, 0.0],
    [-0.13, 0.52, 0.0],
    [0.14, 0.1, 0.0],
    [-0.14, 0.1, 0.0],
];

/// Sideways walk with arms rising to shoulder height.
fn walk(m: f64) -> Vec<[f64; 3]> {
    let root = [-0.3 + 0.6 * m, 0.02 * (4.0 * PI * m).sin(), 0.1 * m];
    let raise = (PI * m).sin();
    let swing = (2.0 * PI * m).sin();
    REST.iter()
        .enumerate()
        .map(|(j, p)| {
            let mut q = *p;
            match j {
                3 | 4 | 5 | 6 => {
                    // Rotate the arm about the shoulder in the frontal plane.
                    let (sh, side) = if j % 2 == 1 { (REST[1], 1.0) } else { (REST[2], -1.0) };
                    let ang = side * raise * 1.2;
                    let (dx, dy) = (p[0] - sh[0], p[1] - sh[1]);
                    let (c, s) = (ang.cos(), ang.sin());
                    q[0] = sh[0] + c * dx - s * dy;
                    q[1] = sh[1] + s * dx + c * dy;
                }
                9 | 10 | 11 | 12 => {
                    let side = if j % 2 == 1 { 1.0 } else { -1.0 };
                    let lift = if j >= 11 { 0.16 } else { 0.08 };
                    q[2] += side * swing * lift;
                    q[1] += lift * 0.4 * (side * swing).max(0.0);
                }
                _ => {}
            }
            [q[0] + root[0], q[1] + root[1], q[2] + root[2]]
        })
        .collect()
}

fn actor(bone_color: [f64; 3], density: f64) -> ActorConfig {
    let times: Vec<f64> = (0..KEYFRAMES).map(|k| k as f64 / (KEYFRAMES - 1) as f64).collect();
    ActorConfig {
        joint_names: DEFAULT_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        keyframes: times.iter().map(|&m| walk(m)).collect(),
        times,
        bones: BONES
            .iter()
            .enumerate()
            .map(|(i, &joints)| BoneConfig {
                joints,
                radius: if i == 0 || i == 1 { 0.07 } else { 0.06 },
                density,
                color: bone_color,
            })
            .collect(),
    }
}

fn slab(min: [f64; 3], max: [f64; 3], density: f64, color: [f64; 3]) -> SlabConfig {
    SlabConfig { min, max, softness: 0.03, density, color }
}

fn blob(center: [f64; 3], sigma: [f64; 3], density: f64, color: [f64; 3]) -> BlobConfig {
    BlobConfig { center, sigma, density, color }
}

const BOUNDS: BoundsConfig = BoundsConfig { min: [-3.2, -0.4, -4.5], max: [3.2, 3.2, 3.4] };

/// Hue wheel used for wall texture.
fn palette(k: usize, shift: f64) -> [f64; 3] {
    let h = (k as f64 * 0.618 + shift).fract() * 2.0 * PI;
    [0.5 + 0.4 * h.cos(), 0.5 + 0.4 * (h - 2.0 * PI / 3.0).cos(), 0.5 + 0.4 * (h + 2.0 * PI / 3.0).cos()]
}

fn scene_a() -> SceneConfig {
    let mut blobs = Vec::new();
    // Wall texture: 6 x 4 grid of colored blobs just in front of the wall.
    for r in 0..4 {
        for c in 0..6 {
            let x = -2.5 + c as f64 + 0.25 * (r % 2) as f64;
            let y = 0.45 + 0.65 * r as f64;
            blobs.push(blob([x, y, 2.92], [0.2, 0.2, 0.06], 25.0, palette(r * 6 + c, 0.1)));
        }
    }
    // Rugs.
    blobs.push(blob([-1.2, 0.02, 0.8], [0.5, 0.03, 0.35], 30.0, [0.7, 0.2, 0.15]));
    blobs.push(blob([1.3, 0.02, -0.6], [0.4, 0.03, 0.4], 30.0, [0.15, 0.35, 0.6]));
    blobs.push(blob([0.2, 0.02, 1.8], [0.7, 0.03, 0.25], 30.0, [0.8, 0.7, 0.2]));
    SceneConfig {
        schema_version: SCHEMA_VERSION,
        name: "scene_a".into(),
        background_color: [0.55, 0.7, 0.85],
        bounds: BOUNDS,
        blobs,
        slabs: vec![
            slab([-3.0, -0.3, -4.2], [3.0, 0.0, 3.3], 30.0, [0.45, 0.4, 0.35]),
            slab([-3.0, -0.3, 3.0], [3.0, 3.0, 3.3], 30.0, [0.85, 0.8, 0.7]),
            slab([1.7, 0.0, 1.0], [1.95, 2.6, 1.25], 30.0, [0.3, 0.3, 0.35]),
        ],
        actor: actor([0.9, 0.35, 0.2], 60.0),
    }
}

fn scene_b() -> SceneConfig {
    let mut blobs = Vec::new();
    // Sparser, larger wall texture in a cooler palette.
    for r in 0..3 {
        for c in 0..4 {
            let x = -2.2 + 1.45 * c as f64 + 0.3 * (r % 2) as f64;
            let y = 0.6 + 0.85 * r as f64;
            blobs.push(blob([x, y, 2.92], [0.3, 0.26, 0.06], 25.0, palette(r * 4 + c, 0.55)));
        }
    }
    blobs.push(blob([0.9, 0.02, 0.6], [0.8, 0.03, 0.5], 30.0, [0.2, 0.55, 0.3]));
    blobs.push(blob([-1.5, 1.2, 1.6], [0.25, 0.25, 0.25], 15.0, [0.95, 0.9, 0.3]));
    SceneConfig {
        schema_version: SCHEMA_VERSION,
        name: "scene_b".into(),
        background_color: [0.2, 0.2, 0.25],
        bounds: BOUNDS,
        blobs,
        slabs: vec![
            slab([-3.0, -0.3, -4.2], [3.0, 0.0, 3.3], 30.0, [0.25, 0.3, 0.3]),
            slab([-3.0, -0.3, 3.0], [3.0, 3.0, 3.3], 30.0, [0.5, 0.55, 0.65]),
            slab([-2.2, 0.0, 0.2], [-1.9, 1.8, 0.5], 30.0, [0.7, 0.6, 0.5]),
            slab([2.0, 0.0, 2.0], [2.6, 0.9, 2.6], 30.0, [0.6, 0.3, 0.5]),
        ],
        actor: actor([0.2, 0.6, 0.9], 60.0),
    }
}

/// Builds a named built-in scene.
pub fn preset(name: &str) -> Result<DynamicScene> {
    let config = match name {
        "scene_a" => scene_a(),
        "scene_b" => scene_b(),
        other => {
            return Err(Error::invalid("scene", format!("unknown preset {other:?} (known: {})", PRESET_NAMES.join(", "))))
        }
    };
    DynamicScene::build(config)
}
