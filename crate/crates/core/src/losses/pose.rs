//! On-screen pose loss: per-joint transport distance plus the difference of
//! inter-joint distance matrices.

use std::sync::Arc;

use super::sinkhorn::{Grid, Histogram, OTConfig, Sinkhorn};
use crate::diffcore::{BackwardStats, CustomOp, OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::Resolution;
use crate::proxies::HeatmapStack;

/// Average-pools one row-major plane by `f`.
fn pool_plane(plane: &[f64], res: Resolution, f: usize) -> Vec<f64> {
    let (gh, gw) = (res.height / f, res.width / f);
    let mut out = vec![0.0; gh * gw];
    for r in 0..res.height {
        for c in 0..res.width {
            out[(r / f) * gw + c / f] += plane[r * res.width + c];
        }
    }
    let inv = 1.0 / (f * f) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Entropic transport cost between two full-resolution heatmap planes after
/// pooling them onto `cfg.grid`.
pub fn sinkhorn_wdist(a: &[f64], b: &[f64], resolution: Resolution, cfg: &OTConfig) -> Result<f64> {
    if a.len() != resolution.pixels() || b.len() != resolution.pixels() {
        return Err(Error::Shape { op: "sinkhorn_wdist", shapes: vec![vec![a.len()], vec![b.len()]] });
    }
    let f = cfg.pool_factor(resolution.height, resolution.width)?;
    let [gh, gw] = cfg.grid;
    super::sinkhorn::sinkhorn_histograms(&pool_plane(a, resolution, f), &pool_plane(b, resolution, f), gh, gw, cfg)
}

/// Pooled, normalized channels of one heatmap stack.
fn pooled_histograms(stack: &HeatmapStack, cfg: &OTConfig) -> Result<Vec<Histogram>> {
    let f = cfg.pool_factor(stack.resolution.height, stack.resolution.width)?;
    (0..stack.joint_count())
        .map(|j| Histogram::normalize(&pool_plane(&stack.channel(j), stack.resolution, f), cfg.mass_floor))
        .collect()
}

fn pair_matrix(solver: &Sinkhorn, h: &[Histogram]) -> Result<Vec<Vec<f64>>> {
    let n = h.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = solver.run(&h[i], &h[j], false)?.cost;
            s[i][j] = d;
            s[j][i] = d;
        }
    }
    Ok(s)
}

/// Symmetric matrix of transport distances between the joint channels.
pub fn inter_joint_matrix(stack: &HeatmapStack, cfg: &OTConfig) -> Result<Vec<Vec<f64>>> {
    let grid = Grid::new(cfg.grid[0], cfg.grid[1], cfg.epsilon);
    pair_matrix(&Sinkhorn::new(&grid, cfg.iters), &pooled_histograms(stack, cfg)?)
}

/// Reference side of the pose loss, pooled and solved once per frame.
#[derive(Debug)]
pub struct PoseTarget {
    cfg: OTConfig,
    grid: Grid,
    resolution: Resolution,
    hists: Vec<Histogram>,
    pairs: Vec<Vec<f64>>,
}

impl PoseTarget {
    pub fn new(reference: &HeatmapStack, cfg: &OTConfig) -> Result<Self> {
        let grid = Grid::new(cfg.grid[0], cfg.grid[1], cfg.epsilon);
        let hists = pooled_histograms(reference, cfg)?;
        let pairs = pair_matrix(&Sinkhorn::new(&grid, cfg.iters), &hists)?;
        Ok(Self { cfg: *cfg, grid, resolution: reference.resolution, hists, pairs })
    }

    pub fn joint_count(&self) -> usize {
        self.hists.len()
    }

    pub fn config(&self) -> &OTConfig {
        &self.cfg
    }

    /// Inter-joint matrix of the reference.
    pub fn pairs(&self) -> &[Vec<f64>] {
        &self.pairs
    }

    pub fn loss(&self, synthesized: &HeatmapStack) -> Result<f64> {
        if synthesized.resolution != self.resolution {
            return Err(Error::Shape {
                op: "pose_loss",
                shapes: vec![vec![self.resolution.height, self.resolution.width], synthesized.data.shape().to_vec()],
            });
        }
        self.check_joints(synthesized.joint_count())?;
        Ok(self.evaluate(&pooled_histograms(synthesized, &self.cfg)?, false)?.0)
    }

    fn check_joints(&self, j: usize) -> Result<()> {
        if j != self.joint_count() {
            return Err(Error::invalid("pose_loss", format!("reference has {} joints, synthesized has {j}", self.joint_count())));
        }
        Ok(())
    }

    /// Loss and, if requested, adjoints on each normalized synthesized
    /// histogram.
    fn evaluate(&self, syn: &[Histogram], with_grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
        let solver = Sinkhorn::new(&self.grid, self.cfg.iters);
        let n = syn.len();
        let mut grads: Vec<Vec<f64>> = syn.iter().map(|h| vec![0.0; h.cells.len()]).collect();
        let mut total = 0.0;
        for j in 0..n {
            let t = solver.run(&self.hists[j], &syn[j], with_grad)?;
            total += t.cost;
            if with_grad {
                add(&mut grads[j], &t.grad_b, 1.0);
            }
        }
        let mut diff = vec![vec![0.0; n]; n];
        let mut partial = Vec::new();
        let mut sq = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let t = solver.run(&syn[i], &syn[j], with_grad)?;
                let d = self.pairs[i][j] - t.cost;
                diff[i][j] = d;
                sq += 2.0 * d * d;
                if with_grad {
                    partial.push((i, j, t));
                }
            }
        }
        let frob = sq.sqrt();
        if with_grad && frob > 0.0 {
            for (i, j, t) in partial {
                // ∂F/∂Ŝ_ij, counting both (i, j) and (j, i).
                let g = -2.0 * diff[i][j] / frob;
                add(&mut grads[i], &t.grad_a, g);
                add(&mut grads[j], &t.grad_b, g);
            }
        }
        Ok((total + frob, grads))
    }
}

fn add(acc: &mut [f64], x: &[f64], k: f64) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += k * b);
}

/// Pose loss between a reference and a synthesized heatmap stack.
pub fn pose_loss(reference: &HeatmapStack, synthesized: &HeatmapStack, cfg: &OTConfig) -> Result<f64> {
    if reference.joint_count() != synthesized.joint_count() {
        return Err(Error::invalid(
            "pose_loss",
            format!("reference has {} joints, synthesized has {}", reference.joint_count(), synthesized.joint_count()),
        ));
    }
    PoseTarget::new(reference, cfg)?.loss(synthesized)
}

struct PoseLossOp {
    target: Arc<PoseTarget>,
}

impl PoseLossOp {
    fn histograms(&self, pooled: &Tensor) -> Result<Vec<Histogram>> {
        let s = pooled.shape();
        let [gh, gw] = self.target.cfg.grid;
        if s != [gh, gw, self.target.joint_count()] {
            return Err(Error::Shape { op: "pose_loss", shapes: vec![s.to_vec(), vec![gh, gw, self.target.joint_count()]] });
        }
        let jc = s[2];
        (0..jc)
            .map(|j| {
                let plane: Vec<f64> = pooled.data().iter().skip(j).step_by(jc).copied().collect();
                Histogram::normalize(&plane, self.target.cfg.mass_floor)
            })
            .collect()
    }
}

impl CustomOp for PoseLossOp {
    fn name(&self) -> &'static str {
        "pose_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(self.target.evaluate(&self.histograms(inputs[0])?, false)?.0))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, adjoint: &Tensor, _: &mut BackwardStats) -> Result<Vec<Option<Tensor>>> {
        let hists = self.histograms(inputs[0])?;
        let (_, grads) = self.target.evaluate(&hists, true)?;
        let g = adjoint.item();
        let shape = inputs[0].shape().to_vec();
        let (cells, jc) = (shape[0] * shape[1], shape[2]);
        let mut out = vec![0.0; cells * jc];
        for (j, (h, gj)) in hists.iter().zip(&grads).enumerate() {
            for (c, v) in h.backprop(gj, cells).into_iter().enumerate() {
                out[c * jc + j] = g * v;
            }
        }
        Ok(vec![Some(Tensor::new(shape, out)?)])
    }
}

/// Records the pose loss of an `[H, W, J]` heatmap node against `target`.
pub fn pose_loss_on_tape(tape: &mut Tape, target: &Arc<PoseTarget>, heatmaps: Var) -> Result<Var> {
    let s = tape.value(heatmaps).shape().to_vec();
    target.check_joints(*s.last().unwrap_or(&0))?;
    let f = target.cfg.pool_factor(s[0], s[1])?;
    let pooled = tape.record(OpKind::AvgPool2d(f), &[heatmaps])?;
    tape.custom(Box::new(PoseLossOp { target: target.clone() }), &[pooled])
}
