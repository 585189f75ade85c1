//! Camera-motion transfer by inverting a differentiable renderer.

pub mod diffcore;
mod error;
pub mod geometry;
pub mod goldens;
pub mod guidance;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod optimizer;
pub mod oracles;
pub mod proxies;
pub mod renderer;
pub mod scene;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
