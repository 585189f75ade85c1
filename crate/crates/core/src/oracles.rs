//! Independent reference computations used to validate the fast paths:
//! exact discrete optimal transport and dense-quadrature rendering.

use crate::error::{Error, Result};
use crate::geometry::{generate_ray, CinematicParams, Resolution};
use crate::scene::DynamicScene;

/// Exact optimal transport cost between histograms `a` and `b` (equal total
/// mass) under `cost(i, j)`, by successive shortest augmenting paths on the
/// transportation network.
pub fn exact_ot(a: &[f64], b: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> Result<f64> {
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if a.iter().chain(b).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("histogram", "masses must be finite and nonnegative"));
    }
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1e-300) {
        return Err(Error::invalid("histogram", format!("unequal total masses {sa} and {sb}")));
    }
    let (n, m) = (a.len(), b.len());
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    // flow[i][j] on the (infinite-capacity) edge i -> j.
    let mut flow = vec![vec![0.0; m]; n];
    let c: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| cost(i, j)).collect()).collect();
    let tol = 1e-15 * sa.max(1e-300);
    loop {
        // Bellman-Ford from all sources with remaining supply over the
        // residual graph: forward edges i -> j, backward edges j -> i where flow > 0.
        let mut dist_s = vec![f64::INFINITY; n];
        let mut dist_t = vec![f64::INFINITY; m];
        let mut pred_t = vec![usize::MAX; m];
        let mut pred_s: Vec<Option<usize>> = vec![None; n];
        for i in 0..n {
            if supply[i] > tol {
                dist_s[i] = 0.0;
            }
        }
        if dist_s.iter().all(|d| d.is_infinite()) {
            break;
        }
        for _ in 0..(n + m) {
            let mut changed = false;
            for i in 0..n {
                if dist_s[i].is_infinite() {
                    continue;
                }
                for j in 0..m {
                    let d = dist_s[i] + c[i][j];
                    if d < dist_t[j] - 1e-15 {
                        dist_t[j] = d;
                        pred_t[j] = i;
                        changed = true;
                    }
                }
            }
            for j in 0..m {
                if dist_t[j].is_infinite() {
                    continue;
                }
                for i in 0..n {
                    if flow[i][j] > tol {
                        let d = dist_t[j] - c[i][j];
                        if d < dist_s[i] - 1e-15 {
                            dist_s[i] = d;
                            pred_s[i] = Some(j);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(sink) = (0..m)
            .filter(|&j| demand[j] > tol && dist_t[j].is_finite())
            .min_by(|&x, &y| dist_t[x].total_cmp(&dist_t[y]))
        else {
            break;
        };
        // Walk back to find the bottleneck.
        let mut amount = demand[sink];
        let mut j = sink;
        loop {
            let i = pred_t[j];
            match pred_s[i] {
                Some(jp) => {
                    amount = amount.min(flow[i][jp]);
                    j = jp;
                }
                _ => {
                    amount = amount.min(supply[i]);
                    break;
                }
            }
        }
        let mut j = sink;
        loop {
            let i = pred_t[j];
            flow[i][j] += amount;
            match pred_s[i] {
                Some(jp) => {
                    flow[i][jp] -= amount;
                    j = jp;
                }
                _ => {
                    supply[i] -= amount;
                    break;
                }
            }
        }
        demand[sink] -= amount;
    }
    Ok((0..n).map(|i| (0..m).map(|j| flow[i][j] * c[i][j]).sum::<f64>()).sum())
}

/// Midpoint-rule volume rendering of one pixel with `n` samples, using only
/// the scene's public point queries.
pub fn dense_pixel_color(
    scene: &DynamicScene,
    params: &CinematicParams,
    resolution: Resolution,
    near: f64,
    far: f64,
    n: usize,
    row: usize,
    col: usize,
) -> [f64; 3] {
    let ray = generate_ray(resolution.pixel_center(row, col), &params.pose(), params.focal, resolution);
    let delta = (far - near) / n as f64;
    let (mut trans, mut c) = (1.0, [0.0; 3]);
    for i in 0..n {
        let t = near + (i as f64 + 0.5) * delta;
        let x = ray.origin + ray.direction * t;
        let sigma = scene.sample_density(&x, params.time);
        let col = scene.sample_color(&x, params.time);
        let a = 1.0 - (-sigma * delta).exp();
        for k in 0..3 {
            c[k] += trans * a * col[k];
        }
        trans *= 1.0 - a;
    }
    let bg = scene.background_color();
    [c[0] + trans * bg[0], c[1] + trans * bg[1], c[2] + trans * bg[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cost(i: usize, j: usize) -> f64 {
        (i as f64 - j as f64).abs()
    }

    #[test]
    fn point_masses() {
        let mut a = vec![0.0; 5];
        let mut b = vec![0.0; 5];
        a[0] = 1.0;
        b[3] = 1.0;
        assert_eq!(exact_ot(&a, &b, &line_cost).unwrap(), 3.0);
    }

    #[test]
    fn one_dimensional_matches_cdf_formula() {
        // On a line, W1 is the L1 distance between cumulative distributions.
        let a = [0.1, 0.4, 0.0, 0.3, 0.2];
        let b = [0.3, 0.0, 0.2, 0.1, 0.4];
        let (mut ca, mut cb, mut w) = (0.0f64, 0.0f64, 0.0);
        for k in 0..5 {
            ca += a[k];
            cb += b[k];
            w += (ca - cb).abs();
        }
        let ot = exact_ot(&a, &b, &line_cost).unwrap();
        assert!((ot - w).abs() < 1e-12, "{ot} vs {w}");
    }

    #[test]
    fn equal_cost_plans() {
        let a = [1.0, 1.0, 0.0];
        let b = [0.0, 1.0, 1.0];
        let ot = exact_ot(&a, &b, &line_cost).unwrap();
        assert!((ot - 2.0).abs() < 1e-12, "{ot}");
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn unit_masses_match_best_assignment() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let pts: Vec<[f64; 2]> = (0..12).map(|_| [rng.gen(), rng.gen()]).collect();
            let cost = |i: usize, j: usize| ((pts[i][0] - pts[6 + j][0]).powi(2) + (pts[i][1] - pts[6 + j][1]).powi(2)).sqrt();
            let best = permutations(6)
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let ot = exact_ot(&[1.0; 6], &[1.0; 6], &cost).unwrap();
            assert!((ot - best).abs() < 1e-9, "{ot} vs {best}");
        }
    }

    #[test]
    fn unequal_mass_rejected() {
        assert!(exact_ot(&[1.0], &[2.0], &line_cost).is_err());
    }
}
