//! Frame dumps: binary PPM for color, PGM-style text grids for scalar maps.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRole {
    Reference,
    Synthesized,
}

impl FrameRole {
    pub fn tag(self) -> &'static str {
        match self {
            FrameRole::Reference => "ref",
            FrameRole::Synthesized => "synth",
        }
    }
}

/// `frame_0007_ref`
pub fn frame_file_stem(index: usize, role: FrameRole) -> String {
    format!("frame_{index:04}_{}", role.tag())
}

/// Writes an `[H, W, 3]` tensor in `[0, 1]` as binary P6.
pub fn write_ppm(path: &Path, color: &Tensor) -> Result<()> {
    let [h, w, 3] = color.shape() else {
        return Err(Error::Shape { op: "write_ppm", shapes: vec![color.shape().to_vec()] });
    };
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(color.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an `[H, W]` map in `[0, max]` as binary P5, scaled to 8 bits.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let [h, w] = map.shape() else {
        return Err(Error::Shape { op: "write_pgm", shapes: vec![map.shape().to_vec()] });
    };
    let max = map.max_abs().max(1e-12);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let body: Vec<u8> = map.data().iter().map(|v| (v.max(0.0) / max * 255.0).round() as u8).collect();
    f.write_all(format!("P5\n{w} {h}\n255\n").as_bytes())
        .and_then(|_| f.write_all(&body))
        .map_err(|e| Error::io(path, e))
}

/// Plain-text float grid: a `PF-TEXT W H` line, then one row per line.
pub fn depth_grid_string(map: &Tensor) -> Result<String> {
    let [h, w] = map.shape() else {
        return Err(Error::Shape { op: "depth_grid", shapes: vec![map.shape().to_vec()] });
    };
    let mut out = format!("PF-TEXT {w} {h}\n");
    for row in map.data().chunks(*w) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    Ok(out)
}

pub fn write_depth_grid(path: &Path, map: &Tensor) -> Result<()> {
    std::fs::write(path, depth_grid_string(map)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("{}.ppm", frame_file_stem(3, FrameRole::Synthesized)));
        let t = Tensor::new(vec![2, 3, 3], vec![0.5; 18]).unwrap();
        write_ppm(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert!(path.ends_with("frame_0003_synth.ppm"));
    }

    #[test]
    fn depth_grid_rows() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.5]).unwrap();
        let s = depth_grid_string(&t).unwrap();
        assert_eq!(s, "PF-TEXT 2 2\n1.000000 2.000000\n3.000000 4.500000\n");
    }
}
