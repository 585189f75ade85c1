//! Camera models, SE(3) calculus and the per-camera cinematic parameters.

mod camera;
mod params;
mod se3;
mod trajectory;

pub use camera::{generate_ray, project, Camera, Ray, Resolution, Z_MIN};
pub use params::{CinematicParams, PARAMS_PER_CAMERA};
pub use se3::{compose_increment, se3_exp, se3_exp_generic, SE3Pose};
pub use trajectory::{Keyframe, Trajectory, EXPORT_HEADER};
