//! Entropic optimal transport between pooled heatmap channels.
//!
//! Transport runs on the supports of the two histograms only. Iterations
//! use the kernel (scaling) form when the kernel cannot underflow and the
//! log-sum-exp form otherwise; both compute the same iterates. Gradients are
//! taken through the unrolled iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `C / ε` for which the kernel form is used.
const KERNEL_LIMIT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OTConfig {
    /// Pooled grid `[rows, cols]`; must divide the render resolution by one
    /// common integer factor.
    pub grid: [usize; 2],
    /// Entropic regularization, in units of the normalized cost.
    pub epsilon: f64,
    pub iters: usize,
    /// Channels with less total mass get this much mass spread uniformly.
    pub mass_floor: f64,
}

impl Default for OTConfig {
    fn default() -> Self {
        Self { grid: [32, 32], epsilon: 0.05, iters: 50, mass_floor: 1e-6 }
    }
}

impl OTConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("ot.epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if self.iters == 0 {
            return Err(Error::invalid("ot.iters", "must be at least 1"));
        }
        if self.grid[0] == 0 || self.grid[1] == 0 {
            return Err(Error::invalid("ot.grid", "dimensions must be positive"));
        }
        if !(self.mass_floor > 0.0) {
            return Err(Error::invalid("ot.mass_floor", "must be positive"));
        }
        Ok(())
    }

    /// Pooling factor mapping `height × width` onto the grid.
    pub fn pool_factor(&self, height: usize, width: usize) -> Result<usize> {
        self.validate()?;
        let [gh, gw] = self.grid;
        if height % gh != 0 || width % gw != 0 || height / gh != width / gw {
            return Err(Error::invalid(
                "ot.grid",
                format!("{gh}x{gw} does not divide {height}x{width} by a common factor"),
            ));
        }
        Ok(height / gh)
    }
}

/// Cost and kernel lookup by cell offset.
#[derive(Debug, Clone)]
pub(crate) struct Grid {
    cols: usize,
    cost: Vec<f64>,
    kernel: Vec<f64>,
    epsilon: f64,
    max_cost: f64,
}

impl Grid {
    pub(crate) fn new(rows: usize, cols: usize, epsilon: f64) -> Self {
        let diag = ((rows * rows + cols * cols) as f64).sqrt();
        let mut cost = Vec::with_capacity(rows * cols);
        for dr in 0..rows {
            for dc in 0..cols {
                cost.push(((dr * dr + dc * dc) as f64).sqrt() / diag);
            }
        }
        let kernel = cost.iter().map(|c| (-c / epsilon).exp()).collect();
        let max_cost = cost.iter().cloned().fold(0.0, f64::max);
        Self { cols, cost, kernel, epsilon, max_cost }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        let (ri, ci) = (i / self.cols, i % self.cols);
        let (rj, cj) = (j / self.cols, j % self.cols);
        ri.abs_diff(rj) * self.cols + ci.abs_diff(cj)
    }

    pub(crate) fn cost(&self, i: usize, j: usize) -> f64 {
        self.cost[self.offset(i, j)]
    }
}

/// Unit-mass histogram restricted to its positive cells.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Histogram {
    pub(crate) cells: Vec<usize>,
    pub(crate) mass: Vec<f64>,
    /// Total mass after flooring, before normalization.
    total: f64,
}

impl Histogram {
    pub(crate) fn normalize(raw: &[f64], floor: f64) -> Result<Self> {
        if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite("transport histogram must be finite and nonnegative".into()));
        }
        let s: f64 = raw.iter().sum();
        let add = if s < floor { floor / raw.len() as f64 } else { 0.0 };
        let total = s + add * raw.len() as f64;
        let (mut cells, mut mass) = (Vec::new(), Vec::new());
        for (i, v) in raw.iter().enumerate() {
            let x = v + add;
            if x > 0.0 {
                cells.push(i);
                mass.push(x / total);
            }
        }
        Ok(Self { cells, mass, total })
    }

    /// Chains an adjoint on the normalized masses back to the raw histogram.
    pub(crate) fn backprop(&self, grad_mass: &[f64], len: usize) -> Vec<f64> {
        let inner: f64 = grad_mass.iter().zip(&self.mass).map(|(g, m)| g * m).sum();
        let mut out = vec![-inner / self.total; len];
        for (k, &i) in self.cells.iter().enumerate() {
            out[i] += grad_mass[k] / self.total;
        }
        out
    }
}

pub(crate) struct Transport {
    pub(crate) cost: f64,
    pub(crate) grad_a: Vec<f64>,
    pub(crate) grad_b: Vec<f64>,
}

pub(crate) struct Sinkhorn<'g> {
    grid: &'g Grid,
    iters: usize,
}

impl<'g> Sinkhorn<'g> {
    pub(crate) fn new(grid: &'g Grid, iters: usize) -> Self {
        Self { grid, iters }
    }

    fn use_log(&self, a: &Histogram, b: &Histogram) -> bool {
        if self.grid.max_cost / self.grid.epsilon <= KERNEL_LIMIT {
            return false;
        }
        let mut worst: f64 = 0.0;
        for &i in &a.cells {
            for &j in &b.cells {
                worst = worst.max(self.grid.cost(i, j));
            }
        }
        worst / self.grid.epsilon > KERNEL_LIMIT
    }

    /// Transport cost `⟨P, C⟩` and, if requested, its gradient with respect to
    /// both normalized histograms.
    ///
    /// The pair is solved in a canonical order so that swapping the
    /// arguments gives bit-identical costs.
    pub(crate) fn run(&self, a: &Histogram, b: &Histogram, with_grad: bool) -> Result<Transport> {
        let log = self.use_log(a, b);
        if canonical_less(b, a) {
            let t = self.run_in(b, a, with_grad, log)?;
            return Ok(Transport { cost: t.cost, grad_a: t.grad_b, grad_b: t.grad_a });
        }
        self.run_in(a, b, with_grad, log)
    }

    pub(crate) fn run_in(&self, a: &Histogram, b: &Histogram, with_grad: bool, log: bool) -> Result<Transport> {
        let (na, nb) = (a.cells.len(), b.cells.len());
        let mut c = vec![0.0; na * nb];
        let mut k = vec![0.0; na * nb];
        for (x, &i) in a.cells.iter().enumerate() {
            for (y, &j) in b.cells.iter().enumerate() {
                let o = self.grid.offset(i, j);
                c[x * nb + y] = self.grid.cost[o];
                k[x * nb + y] = self.grid.kernel[o];
            }
        }
        if log {
            self.run_log(a, b, &c, with_grad)
        } else {
            self.run_kernel(a, b, &c, &k, with_grad)
        }
    }

    fn diverged(&self, t: usize) -> Error {
        Error::SinkhornDiverged { iteration: t + 1, epsilon: self.grid.epsilon }
    }

    fn run_kernel(&self, a: &Histogram, b: &Histogram, c: &[f64], k: &[f64], with_grad: bool) -> Result<Transport> {
        let (na, nb) = (a.cells.len(), b.cells.len());
        let mut v = vec![1.0; nb];
        let mut u = vec![0.0; na];
        let mut saved = Vec::with_capacity(if with_grad { self.iters } else { 0 });
        for t in 0..self.iters {
            let mut y = vec![0.0; na];
            for x in 0..na {
                let row = &k[x * nb..(x + 1) * nb];
                y[x] = row.iter().zip(&v).map(|(kk, vv)| kk * vv).sum();
                u[x] = a.mass[x] / y[x];
            }
            let mut z = vec![0.0; nb];
            for x in 0..na {
                let ux = u[x];
                for (zz, kk) in z.iter_mut().zip(&k[x * nb..(x + 1) * nb]) {
                    *zz += kk * ux;
                }
            }
            for yy in 0..nb {
                v[yy] = b.mass[yy] / z[yy];
            }
            if u.iter().chain(&v).any(|s| !s.is_finite()) {
                return Err(self.diverged(t));
            }
            if with_grad {
                saved.push([u.clone(), v.clone(), y, z]);
            }
        }
        let mut cost = 0.0;
        for x in 0..na {
            for yy in 0..nb {
                cost += u[x] * k[x * nb + yy] * c[x * nb + yy] * v[yy];
            }
        }
        if !cost.is_finite() {
            return Err(self.diverged(self.iters - 1));
        }
        if !with_grad {
            return Ok(Transport { cost, grad_a: vec![], grad_b: vec![] });
        }
        let (ga, gb) = self.kernel_adjoint(a, b, c, k, &saved);
        Ok(Transport { cost, grad_a: ga, grad_b: gb })
    }

    /// Adjoint sweep over the saved `(u_t, v_t, K v_{t-1}, Kᵀ u_t)`.
    fn kernel_adjoint(&self, a: &Histogram, b: &Histogram, c: &[f64], k: &[f64], saved: &[[Vec<f64>; 4]]) -> (Vec<f64>, Vec<f64>) {
        let (na, nb) = (a.cells.len(), b.cells.len());
        let [u_l, v_l, _, _] = saved.last().unwrap();
        let mut u_extra = vec![0.0; na];
        let mut v_bar = vec![0.0; nb];
        for x in 0..na {
            for yy in 0..nb {
                let m = k[x * nb + yy] * c[x * nb + yy];
                u_extra[x] += m * v_l[yy];
                v_bar[yy] += m * u_l[x];
            }
        }
        let mut ga = vec![0.0; na];
        let mut gb = vec![0.0; nb];
        for [u, v, y, z] in saved.iter().rev() {
            // v = b / z, z = Kᵀ u
            let mut u_bar = std::mem::replace(&mut u_extra, vec![0.0; na]);
            for yy in 0..nb {
                gb[yy] += v_bar[yy] / z[yy];
                let z_bar = -v_bar[yy] * v[yy] / z[yy];
                for x in 0..na {
                    u_bar[x] += k[x * nb + yy] * z_bar;
                }
            }
            // u = a / y, y = K v_prev
            let mut vp_bar = vec![0.0; nb];
            for x in 0..na {
                ga[x] += u_bar[x] / y[x];
                let y_bar = -u_bar[x] * u[x] / y[x];
                for (vb, kk) in vp_bar.iter_mut().zip(&k[x * nb..(x + 1) * nb]) {
                    *vb += kk * y_bar;
                }
            }
            v_bar = vp_bar;
        }
        (ga, gb)
    }

    fn run_log(&self, a: &Histogram, b: &Histogram, c: &[f64], with_grad: bool) -> Result<Transport> {
        let eps = self.grid.epsilon;
        let (na, nb) = (a.cells.len(), b.cells.len());
        let la: Vec<f64> = a.mass.iter().map(|m| eps * m.ln()).collect();
        let lb: Vec<f64> = b.mass.iter().map(|m| eps * m.ln()).collect();
        let mut f = vec![0.0; na];
        let mut g = vec![0.0; nb];
        let mut saved = Vec::with_capacity(if with_grad { self.iters } else { 0 });
        let mut buf = vec![0.0; na.max(nb)];
        for t in 0..self.iters {
            for x in 0..na {
                for yy in 0..nb {
                    buf[yy] = (g[yy] - c[x * nb + yy]) / eps;
                }
                f[x] = la[x] - eps * log_sum_exp(&buf[..nb]);
            }
            for yy in 0..nb {
                for x in 0..na {
                    buf[x] = (f[x] - c[x * nb + yy]) / eps;
                }
                g[yy] = lb[yy] - eps * log_sum_exp(&buf[..na]);
            }
            if f.iter().chain(&g).any(|s| !s.is_finite()) {
                return Err(self.diverged(t));
            }
            if with_grad {
                saved.push([f.clone(), g.clone()]);
            }
        }
        let mut cost = 0.0;
        let mut f_bar = vec![0.0; na];
        let mut g_bar = vec![0.0; nb];
        for x in 0..na {
            for yy in 0..nb {
                let cc = c[x * nb + yy];
                let pc = ((f[x] + g[yy] - cc) / eps).exp() * cc;
                cost += pc;
                f_bar[x] += pc / eps;
                g_bar[yy] += pc / eps;
            }
        }
        if !cost.is_finite() {
            return Err(self.diverged(self.iters - 1));
        }
        if !with_grad {
            return Ok(Transport { cost, grad_a: vec![], grad_b: vec![] });
        }
        let mut ga = vec![0.0; na];
        let mut gb = vec![0.0; nb];
        let zeros = vec![0.0; nb];
        for t in (0..self.iters).rev() {
            let [ft, _] = &saved[t];
            let g_prev = if t == 0 { &zeros } else { &saved[t - 1][1] };
            // g_t[j] = ε ln b_j − ε LSE_i((f_t[i] − C_ij)/ε)
            for yy in 0..nb {
                gb[yy] += g_bar[yy] * eps / b.mass[yy];
                for x in 0..na {
                    buf[x] = (ft[x] - c[x * nb + yy]) / eps;
                }
                let lse = log_sum_exp(&buf[..na]);
                for x in 0..na {
                    f_bar[x] -= g_bar[yy] * (buf[x] - lse).exp();
                }
            }
            // f_t[i] = ε ln a_i − ε LSE_j((g_{t−1}[j] − C_ij)/ε)
            let mut gp_bar = vec![0.0; nb];
            for x in 0..na {
                ga[x] += f_bar[x] * eps / a.mass[x];
                for yy in 0..nb {
                    buf[yy] = (g_prev[yy] - c[x * nb + yy]) / eps;
                }
                let lse = log_sum_exp(&buf[..nb]);
                for yy in 0..nb {
                    gp_bar[yy] -= f_bar[x] * (buf[yy] - lse).exp();
                }
            }
            g_bar = gp_bar;
            f_bar = vec![0.0; na];
        }
        Ok(Transport { cost, grad_a: ga, grad_b: gb })
    }
}

fn canonical_less(x: &Histogram, y: &Histogram) -> bool {
    x.cells
        .cmp(&y.cells)
        .then_with(|| x.mass.iter().zip(&y.mass).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
        .is_lt()
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic transport cost between two raw `rows × cols` histograms.
pub fn sinkhorn_histograms(a: &[f64], b: &[f64], rows: usize, cols: usize, cfg: &OTConfig) -> Result<f64> {
    cfg.validate()?;
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(Error::Shape { op: "sinkhorn", shapes: vec![vec![a.len()], vec![b.len()], vec![rows, cols]] });
    }
    let grid = Grid::new(rows, cols, cfg.epsilon);
    let (ha, hb) = (Histogram::normalize(a, cfg.mass_floor)?, Histogram::normalize(b, cfg.mass_floor)?);
    Ok(Sinkhorn::new(&grid, cfg.iters).run(&ha, &hb, false)?.cost)
}
