//! Experiment runner: scenarios in, run records, trajectories, frames and
//! tables out.

mod motion;
mod scenario;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use motion::{MotionKind, MotionSpec};
pub use scenario::{load_scene, InitSpec, Scenario};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{CinematicParams, Trajectory};
use crate::metrics::{landscape_probe, symmetric_offsets, EvalReport, Landscape, LandscapeKind};
use crate::optimizer::{transfer_clip, IterationLog};
use crate::proxies::make_reference;
use crate::renderer::{frame_file_stem, write_ppm, FrameRole, Renderer};

/// File names inside a run directory.
pub const RECORD_FILE: &str = "record.json";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const GT_TRAJECTORY_FILE: &str = "gt_trajectory.txt";
pub const ITERATIONS_FILE: &str = "iterations.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Time,
    Focal,
}

impl std::str::FromStr for ParamKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Self::Time),
            "focal" => Ok(Self::Focal),
            _ => Err(Error::invalid("kind", format!("unknown parameter {s:?}, expected time or focal"))),
        }
    }
}

impl ParamKind {
    fn value(self, p: &CinematicParams) -> f64 {
        match self {
            Self::Time => p.time,
            Self::Focal => p.focal,
        }
    }
}

/// Per-run outcome of a single-parameter recovery experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAblation {
    pub kind: ParamKind,
    pub init_value: f64,
    pub gt_values: Vec<f64>,
    /// Empty when the run failed.
    pub est_values: Vec<f64>,
    /// Mean absolute error of the optimized values; absent on failure.
    pub method_error: Option<f64>,
    /// Mean absolute error when the parameter stays at its initial value.
    pub control_error: f64,
}

/// One run, serialized as `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub report: EvalReport,
    pub wall_time_s: f64,
    pub iterations: usize,
    /// Largest count of pixels with a nonzero adjoint in any backward pass.
    pub peak_active_pixels: usize,
    /// Relative to the run directory.
    pub trajectory_path: Option<String>,
    pub ablation: Option<ParamAblation>,
}

impl RunRecord {
    /// The record without its wall-clock time, which is the only field
    /// allowed to differ between identical runs.
    pub fn without_timing(&self) -> Self {
        Self { wall_time_s: 0.0, ..self.clone() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Everything a run produced, before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub gt: Trajectory,
    pub trajectory: Option<Trajectory>,
    pub logs: Vec<IterationLog>,
}

impl RunOutput {
    /// Writes record, trajectories and iteration log into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.gt.save(&dir.join(GT_TRAJECTORY_FILE))?;
        if let Some(t) = &self.trajectory {
            t.save(&dir.join(TRAJECTORY_FILE))?;
        }
        let mut lines = String::new();
        for l in &self.logs {
            lines.push_str(&serde_json::to_string(l).map_err(|e| Error::Parse(e.to_string()))?);
            lines.push('\n');
        }
        write_text(&dir.join(ITERATIONS_FILE), &lines)?;
        let json = serde_json::to_string_pretty(&self.record).map_err(|e| Error::Parse(e.to_string()))?;
        write_text(&dir.join(RECORD_FILE), &(json + "\n"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds the reference on the reference scene, transfers it into the
/// target scene and evaluates. Optimization failures become a record with
/// `success = false`; only invalid input is an error.
pub fn run_scenario(s: &Scenario, base_dir: Option<&Path>) -> Result<RunOutput> {
    s.validate()?;
    let (ref_renderer, target) = s.renderers(base_dir)?;
    let gt = s.motion.trajectory(s.seed)?;
    let first = gt.keyframes()[0].params;
    let init = s.init.resolve(&first, target.scene(), s.motion.target, s.seed)?;
    run_with_init(s, &ref_renderer, &target, gt, init)
}

fn run_with_init(s: &Scenario, ref_renderer: &Renderer, target: &Renderer, gt: Trajectory, init: CinematicParams) -> Result<RunOutput> {
    let cfg = s.optim_config();
    let reference = make_reference(&gt, ref_renderer, &cfg.heatmap)?;
    let start = Instant::now();
    let result = transfer_clip(&reference, target, init, &cfg);
    let wall_time_s = start.elapsed().as_secs_f64();
    let (report, trajectory, logs, iterations, peak) = match result {
        Ok(r) => {
            let frames = if s.same_scene() {
                let est: Result<Vec<Tensor>> = r.trajectory.params().map(|p| Ok(target.render(p)?.color)).collect();
                let refs: Option<Vec<Tensor>> = reference.frames.iter().map(|f| f.color.clone()).collect();
                refs.map(|refs| (est, refs))
            } else {
                None
            };
            let report = match frames {
                Some((Ok(est), refs)) => EvalReport::evaluate(&r.trajectory, &gt, target.scene(), target, Some((&est, &refs))),
                Some((Err(e), _)) => Err(e),
                None => EvalReport::evaluate(&r.trajectory, &gt, target.scene(), target, None),
            }
            .unwrap_or_else(|e| EvalReport::failed("evaluate", &e));
            let logs: Vec<IterationLog> = r.logs().cloned().collect();
            (report, Some(r.trajectory.clone()), logs, r.iterations(), r.peak_active_pixels())
        }
        Err(e) => (EvalReport::failed("optimize", &e), None, Vec::new(), 0, 0),
    };
    let record = RunRecord {
        scenario: s.clone(),
        report,
        wall_time_s,
        iterations,
        peak_active_pixels: peak,
        trajectory_path: trajectory.as_ref().map(|_| TRAJECTORY_FILE.to_string()),
        ablation: None,
    };
    Ok(RunOutput { record, gt, trajectory, logs })
}

/// Copy task: runs the scenario and writes its outputs under `out/<name>`.
pub fn cmd_copy_task(s: &Scenario, base_dir: Option<&Path>, out: Option<&Path>) -> Result<RunRecord> {
    let run = run_scenario(s, base_dir)?;
    if let Some(out) = out {
        run.write(&out.join(&s.name))?;
    }
    Ok(run.record)
}

/// Time or focal recovery: `runs` clips of `clip_len` frames in which only
/// the studied parameter varies, each started from a random value of it.
pub fn cmd_ablate_param(
    kind: ParamKind,
    base: &Scenario,
    runs: usize,
    clip_len: usize,
    seed: u64,
    base_dir: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<RunRecord>> {
    let mut motion = base.motion.clone();
    motion.kind = match kind {
        ParamKind::Time => MotionKind::TimeOnly,
        ParamKind::Focal => MotionKind::FocalOnly,
    };
    motion.frames = clip_len;
    let mut records = Vec::with_capacity(runs);
    for r in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64 + 1);
        let s = Scenario {
            name: format!("{}-{kind:?}-{r:02}", base.name).to_lowercase(),
            motion: motion.clone(),
            init: InitSpec::Same,
            seed: seed.wrapping_add(r as u64),
            ..base.clone()
        };
        s.validate()?;
        let (ref_renderer, target) = s.renderers(base_dir)?;
        let gt = s.motion.trajectory(s.seed)?;
        let mut init = gt.keyframes()[0].params;
        let init_value = match kind {
            ParamKind::Time => {
                init.time = rng.gen_range(0.0..1.0);
                init.time
            }
            ParamKind::Focal => {
                let (lo, hi) = (0.5 * motion.focal, 2.0 * motion.focal);
                init.focal = rng.gen_range(lo..hi).clamp(s.optim.focal_range[0], s.optim.focal_range[1]);
                init.focal
            }
        };
        let mut run = run_with_init(&s, &ref_renderer, &target, gt.clone(), init)?;
        let gt_values: Vec<f64> = gt.params().map(|p| kind.value(p)).collect();
        let est_values: Vec<f64> = run.trajectory.iter().flat_map(|t| t.params().map(|p| kind.value(p))).collect();
        let mae = |v: &[f64]| v.iter().zip(&gt_values).map(|(a, b)| (a - b).abs()).sum::<f64>() / gt_values.len() as f64;
        let control = vec![init_value; gt_values.len()];
        run.record.ablation = Some(ParamAblation {
            kind,
            init_value,
            method_error: (!est_values.is_empty()).then(|| mae(&est_values)),
            control_error: mae(&control),
            gt_values,
            est_values,
        });
        if let Some(out) = out {
            run.write(&out.join(&s.name))?;
        }
        records.push(run.record);
    }
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_text(&out.join(format!("ablate-{kind:?}.md").to_lowercase()), &param_table(&records))?;
    }
    Ok(records)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Median method and control errors of parameter-ablation records. Failed
/// runs count as keeping their initial value.
pub fn param_medians(records: &[RunRecord]) -> Option<(f64, f64)> {
    let abl: Vec<&ParamAblation> = records.iter().filter_map(|r| r.ablation.as_ref()).collect();
    let method: Vec<f64> = abl.iter().map(|a| a.method_error.unwrap_or(a.control_error)).collect();
    let control: Vec<f64> = abl.iter().map(|a| a.control_error).collect();
    Some((median(&method)?, median(&control)?))
}

pub fn param_table(records: &[RunRecord]) -> String {
    let mut t = String::from("| run | init | method error | control error |\n|---|---|---|---|\n");
    for r in records {
        if let Some(a) = &r.ablation {
            let m = a.method_error.map_or("failed".to_string(), |e| format!("{e:.4}"));
            let _ = writeln!(t, "| {} | {:.4} | {m} | {:.4} |", r.scenario.name, a.init_value, a.control_error);
        }
    }
    if let Some((m, c)) = param_medians(records) {
        let _ = writeln!(t, "| median | | {m:.4} | {c:.4} |");
    }
    t
}

/// One row of the guidance sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRow {
    /// `None` is the unmasked run.
    pub n: Option<usize>,
    pub ate_mean: f64,
    pub ate_std: f64,
    pub peak_active_pixels: usize,
    pub failures: usize,
}

/// Repeats the copy task for every sample count, `repeats` seeds each.
pub fn cmd_ablate_guidance(
    counts: &[Option<usize>],
    base: &Scenario,
    repeats: usize,
    base_dir: Option<&Path>,
    out: Option<&Path>,
) -> Result<(Vec<GuidanceRow>, Vec<RunRecord>)> {
    let pixels = base.resolution()?.pixels();
    if let Some(n) = counts.iter().flatten().find(|&&n| n > pixels) {
        return Err(Error::invalid("counts", format!("{n} exceeds the {pixels} pixels of a frame")));
    }
    let mut rows = Vec::with_capacity(counts.len());
    let mut records = Vec::new();
    for &n in counts {
        let mut group = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let label = n.map_or("full".to_string(), |n| n.to_string());
            let s = Scenario {
                name: format!("{}-n{label}-{rep:02}", base.name),
                seed: base.seed.wrapping_add(rep as u64),
                optim: crate::optimizer::OptimConfig { guidance_n: n, ..base.optim.clone() },
                ..base.clone()
            };
            let run = run_scenario(&s, base_dir)?;
            if let Some(out) = out {
                run.write(&out.join(&s.name))?;
            }
            group.push(run.record);
        }
        rows.push(guidance_row(n, &group));
        records.extend(group);
    }
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_text(&out.join("ablate-guidance.md"), &guidance_table(&rows))?;
    }
    Ok((rows, records))
}

/// Summary of one sample count; regenerable from the records alone.
pub fn guidance_row(n: Option<usize>, records: &[RunRecord]) -> GuidanceRow {
    let ates: Vec<f64> = records.iter().filter_map(|r| r.report.rmse_ate).collect();
    let k = ates.len().max(1) as f64;
    let mean = ates.iter().sum::<f64>() / k;
    let var = ates.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k;
    GuidanceRow {
        n,
        ate_mean: mean,
        ate_std: var.sqrt(),
        peak_active_pixels: records.iter().map(|r| r.peak_active_pixels).max().unwrap_or(0),
        failures: records.iter().filter(|r| !r.report.success).count(),
    }
}

pub fn guidance_table(rows: &[GuidanceRow]) -> String {
    let mut t = String::from("| n | ATE mean | ATE std | peak adjoint pixels | failures |\n|---|---|---|---|---|\n");
    for r in rows {
        let n = r.n.map_or("full".to_string(), |n| n.to_string());
        let _ = writeln!(t, "| {n} | {:.5} | {:.5} | {} | {} |", r.ate_mean, r.ate_std, r.peak_active_pixels, r.failures);
    }
    t
}

/// Landscape around ground-truth frame 0 of the scenario's motion, with
/// the reference from the reference scene and renders from the target.
pub fn cmd_landscape(kind: LandscapeKind, s: &Scenario, cells: usize, extent: f64, base_dir: Option<&Path>, out: Option<&Path>) -> Result<Landscape> {
    if cells == 0 || !(extent > 0.0) {
        return Err(Error::invalid("grid", "need at least one cell and a positive extent"));
    }
    s.validate()?;
    let (ref_renderer, target) = s.renderers(base_dir)?;
    let gt = s.motion.trajectory(s.seed)?;
    let cfg = s.optim_config();
    let reference = make_reference(&gt, &ref_renderer, &cfg.heatmap)?;
    let d = symmetric_offsets(cells, extent);
    let l = landscape_probe(kind, &target, &reference.frames[0], &gt.keyframes()[0].params, &d, &d, &cfg.ot, &cfg.heatmap)?;
    if let Some(out) = out {
        let dir = out.join(&s.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stem = format!("landscape-{kind:?}").to_lowercase();
        let json = serde_json::to_string_pretty(&l).map_err(|e| Error::Parse(e.to_string()))?;
        write_text(&dir.join(format!("{stem}.json")), &(json + "\n"))?;
        write_text(&dir.join(format!("{stem}.csv")), &landscape_csv(&l))?;
        write_text(&dir.join(format!("{stem}-slices.csv")), &landscape_slices(&l))?;
    }
    Ok(l)
}

fn cell(v: Option<f64>) -> String {
    v.map_or("nan".to_string(), |v| format!("{v:.6}"))
}

/// Normalized matrix, rows along `dy`, with the offsets as headers.
pub fn landscape_csv(l: &Landscape) -> String {
    let mut t = String::from("dy\\dx");
    for x in &l.dx {
        let _ = write!(t, ",{x:.4}");
    }
    t.push('\n');
    for (y, row) in l.dy.iter().zip(&l.normalized) {
        let _ = write!(t, "{y:.4}");
        for v in row {
            let _ = write!(t, ",{}", cell(*v));
        }
        t.push('\n');
    }
    t
}

/// Center row and column of the normalized matrix.
pub fn landscape_slices(l: &Landscape) -> String {
    let (r0, c0) = l.center();
    let mut t = String::from("axis,offset,value\n");
    for (c, x) in l.dx.iter().enumerate() {
        let _ = writeln!(t, "x,{x:.4},{}", cell(l.normalized[r0][c]));
    }
    for (r, y) in l.dy.iter().enumerate() {
        let _ = writeln!(t, "y,{y:.4},{}", cell(l.normalized[r][c0]));
    }
    t
}

/// Interpolates a keyframe file to `multiplier` × the frame rate, renders
/// every frame and writes the dense trajectory. Returns the frame count.
pub fn cmd_render_export(trajectory: &Path, renderer: &Renderer, multiplier: usize, out: &Path) -> Result<usize> {
    let keys = Trajectory::load(trajectory)?;
    if keys.is_empty() {
        return Err(Error::invalid("trajectory", "no keyframes"));
    }
    let dense = keys.resample(multiplier)?;
    let frames = out.join("frames");
    std::fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    for (i, p) in dense.params().enumerate() {
        let color = renderer.render(p)?.color;
        write_ppm(&frames.join(format!("{}.ppm", frame_file_stem(i, FrameRole::Synthesized))), &color)?;
    }
    dense.save(&out.join("export.txt"))?;
    Ok(dense.len())
}

/// Shipped scenario files, relative to the crate root.
pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Resolution;
    use crate::losses::OTConfig;
    use crate::optimizer::LossArm;
    use crate::testutil::preset_renderer;

    fn tiny(name: &str, arm: LossArm, frames: usize, iters: usize) -> Scenario {
        let mut m = MotionSpec::new(MotionKind::Arc);
        m.frames = frames;
        m.focal = 15.0;
        let mut s = Scenario::new(name, m);
        s.resolution = "16x16".into();
        s.arm = arm;
        s.optim.iters_per_window = iters;
        s.optim.ot = OTConfig { grid: [8, 8], ..Default::default() };
        s.optim.guidance_n = Some(32);
        s
    }

    #[test]
    fn zero_iterations_keep_the_first_camera() {
        // Later cameras start from their predecessor, so only frame 0 is exact.
        let s = tiny("same", LossArm::FlowPose, 3, 0);
        let rec = cmd_copy_task(&s, None, None).unwrap();
        assert!(rec.report.success);
        assert!(rec.report.ate_per_frame[0] < 1e-12);
        assert!(rec.report.je_per_frame[0] < 1e-9);
        assert!(rec.report.pe_per_frame[0] < 1e-12);
        assert!(rec.report.ate_per_frame[2] > 0.0);
        assert_eq!(rec.iterations, 0);
    }

    #[test]
    fn cross_scene_runs_skip_pixel_error_and_write_outputs() {
        let mut s = tiny("cross", LossArm::Pose, 3, 2);
        s.target_scene = "scene_b".into();
        s.init = InitSpec::Perturbed { translation: 0.02, rotation_deg: 2.0 };
        let dir = tempfile::tempdir().unwrap();
        let rec = cmd_copy_task(&s, None, Some(dir.path())).unwrap();
        assert!(rec.report.success);
        assert!(rec.report.pe.is_none());
        let run = dir.path().join("cross");
        let back = RunRecord::load(&run.join(RECORD_FILE)).unwrap();
        assert_eq!(back, rec);
        let t = Trajectory::load(&run.join(TRAJECTORY_FILE)).unwrap();
        assert_eq!(t.len(), 3);
        let lines = std::fs::read_to_string(run.join(ITERATIONS_FILE)).unwrap();
        assert_eq!(lines.lines().count(), rec.iterations);
        for l in lines.lines() {
            serde_json::from_str::<IterationLog>(l).unwrap();
        }
    }

    #[test]
    fn optimizer_failure_is_recorded() {
        // A huge learning rate throws the camera out of the scene.
        let mut s = tiny("fail", LossArm::Pose, 3, 5);
        s.init = InitSpec::Perturbed { translation: 0.05, rotation_deg: 5.0 };
        s.optim.adam.lr_translation = 50.0;
        let rec = cmd_copy_task(&s, None, None).unwrap();
        assert!(!rec.report.success);
        assert!(rec.report.failure.as_deref().unwrap().starts_with("optimize"));
        assert!(rec.trajectory_path.is_none());
    }

    #[test]
    fn runs_repeat_bit_identically() {
        let mut s = tiny("repeat", LossArm::FlowPose, 3, 3);
        s.init = InitSpec::Perturbed { translation: 0.03, rotation_deg: 3.0 };
        let a = cmd_copy_task(&s, None, None).unwrap();
        let b = cmd_copy_task(&s, None, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a.without_timing()).unwrap(),
            serde_json::to_string(&b.without_timing()).unwrap()
        );
    }

    #[test]
    fn param_ablation_shapes() {
        let s = tiny("abl", LossArm::Pose, 2, 1);
        let recs = cmd_ablate_param(ParamKind::Time, &s, 3, 4, 7, None, None).unwrap();
        assert_eq!(recs.len(), 3);
        for r in &recs {
            let a = r.ablation.as_ref().unwrap();
            assert_eq!(a.gt_values.len(), 4);
            assert_eq!(r.scenario.motion.kind, MotionKind::TimeOnly);
            let gt0 = a.gt_values[0];
            let expect: f64 = a.gt_values.iter().map(|g| (g - a.init_value).abs()).sum::<f64>() / 4.0;
            assert!((a.control_error - expect).abs() < 1e-15, "{gt0}");
        }
        assert!(param_table(&recs).contains("median"));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn guidance_sweep_counts_adjoint_pixels() {
        let s = tiny("guide", LossArm::Flow, 2, 2);
        let (rows, recs) = cmd_ablate_guidance(&[Some(8), Some(32)], &s, 1, None, None).unwrap();
        assert_eq!(recs.len(), 2);
        // Render and flow nodes of frame 0 each carry at most n live
        // pixels; a few sampled pixels can have an exactly zero adjoint.
        for (row, n) in rows.iter().zip([8, 32]) {
            assert!(row.peak_active_pixels <= 2 * n && 4 * row.peak_active_pixels >= 6 * n, "{row:?}");
        }
        assert!(cmd_ablate_guidance(&[Some(257)], &s, 1, None, None).is_err());
        assert!(guidance_table(&rows).lines().count() == 4);
    }

    #[test]
    fn landscape_output_has_requested_grid() {
        let s = tiny("land", LossArm::Pose, 2, 0);
        let dir = tempfile::tempdir().unwrap();
        let l = cmd_landscape(LandscapeKind::Pose, &s, 3, 0.2, None, Some(dir.path())).unwrap();
        assert_eq!((l.raw.len(), l.raw[0].len()), (3, 3));
        let csv = std::fs::read_to_string(dir.path().join("land/landscape-pose.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 4);
        let slices = std::fs::read_to_string(dir.path().join("land/landscape-pose-slices.csv")).unwrap();
        assert_eq!(slices.lines().count(), 7);
    }

    #[test]
    fn render_export_frame_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = MotionSpec::new(MotionKind::PushIn);
        m.frames = 3;
        m.focal = 4.0;
        let keys = m.trajectory(0).unwrap();
        let path = dir.path().join("keys.txt");
        keys.save(&path).unwrap();
        let r = preset_renderer("scene_a", Resolution::new(4, 4));
        assert_eq!(cmd_render_export(&path, &r, 1, &dir.path().join("x1")).unwrap(), 3);
        let n = cmd_render_export(&path, &r, 4, &dir.path().join("x4")).unwrap();
        assert_eq!(n, 9);
        assert_eq!(std::fs::read_dir(dir.path().join("x4/frames")).unwrap().count(), 9);
        let back = Trajectory::load(&dir.path().join("x4/export.txt")).unwrap();
        assert_eq!(back.len(), 9);
        std::fs::write(dir.path().join("bad.txt"), "garbage\n").unwrap();
        assert!(cmd_render_export(&dir.path().join("bad.txt"), &r, 1, dir.path()).is_err());
    }

    #[test]
    fn shipped_scenarios_parse() {
        let mut n = 0;
        for e in std::fs::read_dir(scenario_dir()).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "toml") {
                Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
                n += 1;
            }
        }
        assert!(n >= 4);
    }
}
