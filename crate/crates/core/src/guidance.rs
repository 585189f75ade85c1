//! Guidance maps and the pixel subsets that carry gradients.
//!
//! Every pixel still feeds the proxies and the loss values; only the sampled
//! pixels pass adjoints back into the renderer.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::Resolution;
use crate::proxies::{FlowField, HeatmapStack};
use crate::renderer::write_pgm;

/// Guard in the min-max normalization.
const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    pub resolution: Resolution,
    /// Row-major `H × W`.
    pub data: Vec<f64>,
}

impl GuidanceMap {
    pub fn new(resolution: Resolution, data: Vec<f64>) -> Result<Self> {
        if data.len() != resolution.pixels() {
            return Err(Error::Shape { op: "guidance_map", shapes: vec![vec![data.len()], vec![resolution.height, resolution.width]] });
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite("guidance values must be finite and nonnegative".into()));
        }
        Ok(Self { resolution, data })
    }

    pub fn uniform(resolution: Resolution) -> Self {
        Self { resolution, data: vec![1.0; resolution.pixels()] }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.resolution.height, self.resolution.width], self.data.clone()).expect("shape checked on construction")
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, &self.to_tensor())
    }
}

/// `(x - min) / (max - min + 1e-12)`.
pub fn min_max_normalize(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    x.iter().map(|v| (v - lo) / (hi - lo + NORMALIZE_EPS)).collect()
}

/// Per-pixel sum over the last axis of `|a - b|`.
fn abs_diff_map(a: &Tensor, b: &Tensor, op: &'static str) -> Result<Vec<f64>> {
    if a.shape() != b.shape() || a.shape().len() != 3 {
        return Err(Error::Shape { op, shapes: vec![a.shape().to_vec(), b.shape().to_vec()] });
    }
    let c = a.shape()[2];
    Ok(a.data().chunks(c).zip(b.data().chunks(c)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum()).collect())
}

/// Normalized heatmap difference alone, for frames without an outgoing flow.
pub fn heatmap_guidance(h_ref: &HeatmapStack, h_syn: &HeatmapStack) -> Result<GuidanceMap> {
    let d = abs_diff_map(&h_ref.data, &h_syn.data, "guidance_map")?;
    GuidanceMap::new(h_ref.resolution, min_max_normalize(&d))
}

/// Sum of the normalized heatmap difference and the normalized flow
/// difference; values lie in `[0, 2]`.
pub fn guidance_map(h_ref: &HeatmapStack, h_syn: &HeatmapStack, o_ref: &FlowField, o_syn: &FlowField) -> Result<GuidanceMap> {
    let mut g = heatmap_guidance(h_ref, h_syn)?;
    if o_ref.resolution != h_ref.resolution {
        return Err(Error::Shape { op: "guidance_map", shapes: vec![h_ref.data.shape().to_vec(), o_ref.data.shape().to_vec()] });
    }
    let f = min_max_normalize(&abs_diff_map(&o_ref.data, &o_syn.data, "guidance_map")?);
    g.data.iter_mut().zip(f).for_each(|(a, b)| *a += b);
    Ok(g)
}

/// Gradient magnitude of a reference color image, for sampling around
/// edges and texture.
pub fn color_gradient_guidance(color: &Tensor) -> Result<GuidanceMap> {
    let s = color.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Shape { op: "color_gradient_guidance", shapes: vec![s.to_vec()] });
    }
    let (h, w) = (s[0], s[1]);
    let lum = |r: usize, c: usize| color.data()[(r * w + c) * 3..][..3].iter().sum::<f64>() / 3.0;
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let gx = lum(r, (c + 1).min(w - 1)) - lum(r, c.saturating_sub(1));
            let gy = lum((r + 1).min(h - 1), c) - lum(r.saturating_sub(1), c);
            data.push(gx.hypot(gy));
        }
    }
    GuidanceMap::new(Resolution::new(h, w), min_max_normalize(&data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Uniform floor added to every pixel, as a fraction of the map mean.
    pub floor_fraction: f64,
    /// Standard deviation, in pixels, of an optional jitter applied to each
    /// drawn position. Zero disables it.
    pub jitter_px: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { floor_fraction: 0.05, jitter_px: 0.0 }
    }
}

/// `n` distinct flat pixel indices drawn without replacement with
/// probability proportional to the map plus its uniform floor.
pub fn sample_pixels(g: &GuidanceMap, n: usize, seed: u64) -> Result<Vec<usize>> {
    sample_pixels_with(g, n, seed, &SamplingConfig::default())
}

pub fn sample_pixels_with(g: &GuidanceMap, n: usize, seed: u64, cfg: &SamplingConfig) -> Result<Vec<usize>> {
    let total = g.data.len();
    if n == 0 || n > total {
        return Err(Error::OutOfRange { what: "sample count", value: n as f64, lo: 1.0, hi: total as f64 });
    }
    if !(cfg.floor_fraction >= 0.0 && cfg.jitter_px >= 0.0) {
        return Err(Error::invalid("sampling", "floor and jitter must be nonnegative"));
    }
    if n == total {
        return Ok((0..total).collect());
    }
    let floor = cfg.floor_fraction * g.mean();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Exponential-key weighted sampling: the n largest keys ln(u)/w form a
    // draw without replacement. Zero-weight pixels come last, in random order.
    let mut keys: Vec<(f64, f64, usize)> = g
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let w = v + floor;
            if w > 0.0 {
                (u.ln() / w, 0.0, i)
            } else {
                (f64::NEG_INFINITY, u, i)
            }
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    if cfg.jitter_px == 0.0 {
        return Ok(keys[..n].iter().map(|k| k.2).collect());
    }
    let normal = Normal::new(0.0, cfg.jitter_px).map_err(|e| Error::invalid("sampling.jitter_px", e.to_string()))?;
    let (h, w) = (g.resolution.height as i64, g.resolution.width as i64);
    let mut taken = vec![false; total];
    let mut out = Vec::with_capacity(n);
    for &(_, _, i) in &keys {
        if out.len() == n {
            break;
        }
        let (r, c) = ((i / g.resolution.width) as i64, (i % g.resolution.width) as i64);
        let jr = (r + normal.sample(&mut rng).round() as i64).clamp(0, h - 1);
        let jc = (c + normal.sample(&mut rng).round() as i64).clamp(0, w - 1);
        for p in [(jr * w + jc) as usize, i] {
            if !taken[p] {
                taken[p] = true;
                out.push(p);
                break;
            }
        }
    }
    Ok(out)
}

/// Restricts backward adjoints of the given pixel nodes to `sampled`.
pub fn apply_gradient_mask(tape: &mut Tape, pixel_nodes: &[Var], sampled: &[usize]) -> Result<()> {
    tape.apply_gradient_mask(pixel_nodes, sampled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(res: Resolution, data: Vec<f64>, j: usize) -> HeatmapStack {
        HeatmapStack::new(res, 1.0, Tensor::new(vec![res.height, res.width, j], data).unwrap()).unwrap()
    }

    fn flow(res: Resolution, data: Vec<f64>) -> FlowField {
        FlowField::new(res, Tensor::new(vec![res.height, res.width, 2], data).unwrap()).unwrap()
    }

    #[test]
    fn identical_inputs_give_zero_map() {
        let res = Resolution::new(3, 4);
        let h = stack(res, (0..24).map(|i| i as f64 * 0.1).collect(), 2);
        let o = flow(res, (0..24).map(|i| i as f64).collect());
        let g = guidance_map(&h, &h, &o, &o).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_flow_pixel_difference() {
        let res = Resolution::new(3, 4);
        let h = stack(res, vec![0.5; 12], 1);
        let o = flow(res, vec![0.0; 24]);
        let mut d = vec![0.0; 24];
        d[2 * 5 + 1] = 3.0;
        let g = guidance_map(&h, &h, &o, &flow(res, d)).unwrap();
        for (p, v) in g.data.iter().enumerate() {
            let expect = if p == 5 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-9, "pixel {p}: {v}");
        }
    }

    #[test]
    fn values_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let res = Resolution::new(8, 8);
        let mut r = |n: usize| (0..n).map(|_| rng.gen_range(0.0..3.0)).collect::<Vec<f64>>();
        let g = guidance_map(&stack(res, r(192), 3), &stack(res, r(192), 3), &flow(res, r(128)), &flow(res, r(128))).unwrap();
        assert!(g.data.iter().all(|v| (0.0..=2.0).contains(v)));
        assert!(g.data.iter().any(|v| *v > 1.0));
    }

    #[test]
    fn full_count_returns_all_pixels() {
        let g = GuidanceMap::new(Resolution::new(4, 4), (0..16).map(|i| i as f64).collect()).unwrap();
        let mut s = sample_pixels(&g, 16, 3).unwrap();
        s.sort();
        assert_eq!(s, (0..16).collect::<Vec<_>>());
        assert!(sample_pixels(&g, 17, 3).is_err());
        assert!(sample_pixels(&g, 0, 3).is_err());
    }

    #[test]
    fn spike_without_floor_is_always_chosen() {
        let mut data = vec![0.0; 25];
        data[13] = 1.0;
        let g = GuidanceMap::new(Resolution::new(5, 5), data).unwrap();
        let cfg = SamplingConfig { floor_fraction: 0.0, jitter_px: 0.0 };
        for seed in 0..50 {
            assert_eq!(sample_pixels_with(&g, 1, seed, &cfg).unwrap(), vec![13]);
        }
    }

    #[test]
    fn distinct_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = GuidanceMap::new(Resolution::new(16, 16), (0..256).map(|_| rng.gen::<f64>().powi(4)).collect()).unwrap();
        for cfg in [SamplingConfig::default(), SamplingConfig { jitter_px: 1.5, ..Default::default() }] {
            let a = sample_pixels_with(&g, 100, 9, &cfg).unwrap();
            assert_eq!(a, sample_pixels_with(&g, 100, 9, &cfg).unwrap());
            let mut s = a.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 100);
        }
    }

    #[test]
    fn single_draw_frequencies_follow_the_map() {
        let res = Resolution::new(3, 4);
        let g = GuidanceMap::new(res, vec![0.0, 1.0, 2.0, 0.5, 0.0, 0.0, 3.0, 1.0, 0.25, 0.0, 0.75, 1.5]).unwrap();
        let floor = 0.05 * g.mean();
        let weights: Vec<f64> = g.data.iter().map(|v| v + floor).collect();
        let total: f64 = weights.iter().sum();
        let draws = 100_000u64;
        let mut counts = vec![0usize; 12];
        for seed in 0..draws {
            counts[sample_pixels(&g, 1, seed).unwrap()[0]] += 1;
        }
        for (p, &c) in counts.iter().enumerate() {
            let prob = weights[p] / total;
            let expect = prob * draws as f64;
            let sd = (draws as f64 * prob * (1.0 - prob)).sqrt();
            assert!((c as f64 - expect).abs() <= 3.0 * sd, "pixel {p}: {c} vs {expect:.1} ± {sd:.1}");
        }
    }

    #[test]
    fn color_gradient_peaks_at_edges() {
        let mut data = vec![0.0; 6 * 6 * 3];
        for r in 0..6 {
            for c in 3..6 {
                for k in 0..3 {
                    data[(r * 6 + c) * 3 + k] = 1.0;
                }
            }
        }
        let g = color_gradient_guidance(&Tensor::new(vec![6, 6, 3], data).unwrap()).unwrap();
        assert_eq!(g.data[0], 0.0);
        assert!((g.data[2] - 1.0).abs() < 1e-9 && (g.data[3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn masked_render_gradient_is_sum_of_sampled_pixels() {
        use crate::testutil::{front_view, preset_renderer};
        let r = preset_renderer("scene_a", Resolution::new(12, 12));
        let p = front_view(10.0, 0.4);
        let grad = |mask: Option<&[usize]>| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::vector(p.packed().to_vec()));
            let img = r.render_on_tape(&mut tape, x, p.pose()).unwrap();
            let loss = tape.sum(img).unwrap();
            if let Some(m) = mask {
                apply_gradient_mask(&mut tape, &[img], m).unwrap();
            }
            let v = tape.value(loss).item();
            (v, tape.grad(loss, &[x]).unwrap().remove(0).into_data())
        };
        let (v_full, full) = grad(None);
        let all: Vec<usize> = (0..144).collect();
        let (v_all, masked_all) = grad(Some(&all));
        assert_eq!(v_full, v_all);
        for (a, b) in full.iter().zip(&masked_all) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let (v_none, none) = grad(Some(&[]));
        assert_eq!(v_full, v_none);
        assert!(none.iter().all(|g| *g == 0.0));
        let sampled = [5usize, 30, 77, 140];
        let (_, masked) = grad(Some(&sampled));
        let mut summed = vec![0.0; 8];
        for &px in &sampled {
            let (_, g) = grad(Some(&[px]));
            summed.iter_mut().zip(g).for_each(|(s, x)| *s += x);
        }
        for (a, b) in masked.iter().zip(&summed) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}
