use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("gradient requested for non-scalar output of shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite adjoint at node {node} ({op})")]
    NonFiniteAdjoint { node: usize, op: &'static str },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown tape node {0}")]
    UnknownNode(usize),

    #[error("point behind camera (depth {depth:.3e} <= {z_min:.0e})")]
    BehindCamera { depth: f64, z_min: f64 },

    #[error("{what} out of range: {value} not in [{lo}, {hi}]")]
    OutOfRange { what: &'static str, value: f64, lo: f64, hi: f64 },

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("renderer produced non-finite sample at pixel ({row}, {col})")]
    RenderPixel { row: usize, col: usize },

    #[error("camera left the scene bounds at {position:?}")]
    OutOfBounds { position: [f64; 3] },

    #[error("Sinkhorn diverged after {iteration} iterations (epsilon {epsilon:e} too small?)")]
    SinkhornDiverged { iteration: usize, epsilon: f64 },

    #[error("optimization failed at iteration {iteration}: {reason}")]
    Optimization { iteration: usize, reason: String },

    #[error("window {window} failed after {} solved frames: {source}", partial.len())]
    Transfer {
        window: usize,
        partial: Vec<crate::geometry::CinematicParams>,
        #[source]
        source: Box<Error>,
    },

    #[error("archive: {0}")]
    Archive(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
