//! Reference clips and their binary tensor archive.
//!
//! Archive layout (little-endian): `b"CTRF"`, then `u32` version, height,
//! width, joint count and frame count; then per frame `J` row-major `f32`
//! planes of `H × W`; then per flow (frame count − 1) the `u` plane and the
//! `v` plane.

use std::io::Read as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::flow::{induced_flow_from_render, FlowField};
use super::heatmap::{render_heatmaps, HeatmapConfig, HeatmapStack};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{Resolution, Trajectory};
use crate::renderer::{RenderedFrame, Renderer};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"CTRF";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSource {
    InternalRender,
    ExternalFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub heatmaps: HeatmapStack,
    /// `[H, W, 3]`, absent for externally supplied clips.
    pub color: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceClip {
    pub frames: Vec<ReferenceFrame>,
    pub flows: Vec<FlowField>,
    pub source: ReferenceSource,
}

impl ReferenceClip {
    pub fn new(frames: Vec<ReferenceFrame>, flows: Vec<FlowField>, source: ReferenceSource) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::invalid("reference", "no frames"))?;
        let (res, j) = (first.heatmaps.resolution, first.heatmaps.joint_count());
        if flows.len() + 1 != frames.len() {
            return Err(Error::invalid("reference.flows", format!("{} flows for {} frames", flows.len(), frames.len())));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.heatmaps.resolution != res || f.heatmaps.joint_count() != j {
                return Err(Error::invalid(format!("reference.frames[{i}]"), "inconsistent resolution or joint count"));
            }
            if let Some(c) = &f.color {
                if c.shape() != [res.height, res.width, 3] {
                    return Err(Error::invalid(format!("reference.frames[{i}].color"), "wrong shape"));
                }
            }
        }
        if let Some(i) = flows.iter().position(|f| f.resolution != res) {
            return Err(Error::invalid(format!("reference.flows[{i}]"), "inconsistent resolution"));
        }
        Ok(Self { frames, flows, source })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> Resolution {
        self.frames[0].heatmaps.resolution
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].heatmaps.joint_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let res = self.resolution();
        let j = self.joint_count();
        let mut out = Vec::with_capacity(24 + 4 * res.pixels() * (j * self.len() + 2 * self.flows.len()));
        out.extend_from_slice(ARCHIVE_MAGIC);
        for v in [ARCHIVE_VERSION, res.height as u32, res.width as u32, j as u32, self.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for f in &self.frames {
            for c in 0..j {
                for v in f.heatmaps.channel(c) {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        for fl in &self.flows {
            for c in 0..2 {
                for v in fl.data.data().iter().skip(c).step_by(2) {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    /// Parses an archive; `sigma_px` is recorded on the heatmap stacks.
    pub fn from_bytes(bytes: &[u8], sigma_px: f64) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Archive("truncated header".into()))?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::Archive(format!("bad magic {magic:?}")));
        }
        let mut header = [0u32; 5];
        for h in &mut header {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| Error::Archive("truncated header".into()))?;
            *h = u32::from_le_bytes(b);
        }
        let [version, h, w, j, n] = header.map(|v| v as usize);
        if version as u32 != ARCHIVE_VERSION {
            return Err(Error::Archive(format!("unsupported version {version}")));
        }
        if h == 0 || w == 0 || j == 0 || n == 0 {
            return Err(Error::Archive(format!("empty dimension in header H={h} W={w} J={j} frames={n}")));
        }
        let plane = h * w;
        let expected = plane.checked_mul(j * n + 2 * (n - 1)).and_then(|x| x.checked_mul(4));
        if expected != Some(r.len()) {
            let have = r.len() / 4;
            let frames_present = have / (plane * j).max(1);
            return Err(Error::Archive(if r.len() < expected.unwrap_or(usize::MAX) {
                if frames_present < n {
                    format!("truncated: {frames_present} of {n} heatmap frames present")
                } else {
                    format!("missing flow records: expected {} flows", n - 1)
                }
            } else {
                format!("{} trailing bytes", r.len() - expected.unwrap_or(0))
            }));
        }
        let mut floats = r.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let res = Resolution::new(h, w);
        let mut frames = Vec::with_capacity(n);
        for _ in 0..n {
            let mut data = vec![0.0; plane * j];
            for c in 0..j {
                for p in 0..plane {
                    data[p * j + c] = floats.next().unwrap();
                }
            }
            let heatmaps = HeatmapStack::new(res, sigma_px, Tensor::new(vec![h, w, j], data)?)?;
            frames.push(ReferenceFrame { heatmaps, color: None });
        }
        let mut flows = Vec::with_capacity(n - 1);
        for _ in 1..n {
            let mut data = vec![0.0; plane * 2];
            for c in 0..2 {
                for p in 0..plane {
                    data[p * 2 + c] = floats.next().unwrap();
                }
            }
            flows.push(FlowField::new(res, Tensor::new(vec![h, w, 2], data)?)?);
        }
        Self::new(frames, flows, ReferenceSource::ExternalFile)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Loads an archive and checks it against the expected joint count.
pub fn load_reference(path: &Path, joint_count: usize, sigma_px: f64) -> Result<ReferenceClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let clip = ReferenceClip::from_bytes(&bytes, sigma_px)?;
    if clip.joint_count() != joint_count {
        return Err(Error::Archive(format!("archive has {} joints, scene has {joint_count}", clip.joint_count())));
    }
    Ok(clip)
}

/// Renders heatmaps, colors and flows along a ground-truth trajectory.
pub fn make_reference(trajectory: &Trajectory, renderer: &Renderer, cfg: &HeatmapConfig) -> Result<ReferenceClip> {
    if trajectory.len() < 2 {
        return Err(Error::invalid("trajectory", "a reference needs at least two keyframes"));
    }
    let params: Vec<_> = trajectory.params().copied().collect();
    let mut frames = Vec::with_capacity(params.len());
    let mut flows = Vec::with_capacity(params.len() - 1);
    for (i, p) in params.iter().enumerate() {
        let packed = renderer.render_packed(&p.base, &p.packed())?;
        if let Some(next) = params.get(i + 1) {
            flows.push(induced_flow_from_render(renderer, p, next, &packed)?);
        }
        let frame = RenderedFrame::from_packed(renderer.resolution(), &packed)?;
        frames.push(ReferenceFrame { heatmaps: render_heatmaps(renderer, cfg, p)?, color: Some(frame.color) });
    }
    ReferenceClip::new(frames, flows, ReferenceSource::InternalRender)
}
