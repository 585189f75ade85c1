//! Differentiable stand-ins for the pose and flow estimators.

mod flow;
mod heatmap;
mod reference;

pub use flow::{flow_on_tape, flow_tensor, induced_flow, induced_flow_from_render, FlowField, ACTOR_GATE, FLOW_MIN_OPACITY};
pub use heatmap::{heatmaps_on_tape, render_heatmaps, HeatmapConfig, HeatmapStack};
pub use reference::{
    load_reference, make_reference, ReferenceClip, ReferenceFrame, ReferenceSource, ARCHIVE_MAGIC, ARCHIVE_VERSION,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{central_difference, relative_error, Tape, Tensor};
    use crate::geometry::{se3_exp, CinematicParams, Resolution, SE3Pose, Trajectory};
    use crate::renderer::QuadratureConfig;
    use crate::testutil::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ODD: Resolution = Resolution::new(15, 15);
    const RES: Resolution = Resolution::new(24, 24);

    fn joint_scene(joint: [f64; 3], slabs: Vec<crate::scene::SlabConfig>) -> crate::scene::DynamicScene {
        let far = [joint[0], joint[1] + 0.5, joint[2]];
        scene(vec![], slabs, Some(vec![vec![joint, far]; 2]))
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b })
    }

    #[test]
    fn on_axis_joint_peaks_at_principal_pixel() {
        let r = renderer(joint_scene([0.0, 0.0, 3.0], vec![]), ODD, QuadratureConfig::default());
        let h = render_heatmaps(&r, &HeatmapConfig::default(), &identity_camera(10.0, 0.0)).unwrap();
        let ch = h.channel(0);
        assert_eq!(argmax(&ch), 7 * 15 + 7);
        assert!((ch[7 * 15 + 7] - 1.0).abs() < 1e-9);
        assert!(ch.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn occluded_joint_is_suppressed() {
        let r = renderer(joint_scene([0.0, 0.0, 4.0], vec![wall(2.0, 30.0)]), ODD, QuadratureConfig::default());
        let cam = identity_camera(10.0, 0.0);
        let h = render_heatmaps(&r, &HeatmapConfig::default(), &cam).unwrap();
        let peak = h.channel(0).into_iter().fold(0.0, f64::max);
        // Oracle: the renderer's transmittance through the same wall along the principal ray.
        let frame = r.render(&cam).unwrap();
        let oracle = 1.0 - frame.pixel_opacity(7, 7);
        assert!(peak < 1e-3, "{peak}");
        assert!(oracle < 1e-3, "{oracle}");
        let open = HeatmapConfig { occlusion: false, ..Default::default() };
        let peak_open = render_heatmaps(&r, &open, &cam).unwrap().channel(0).into_iter().fold(0.0, f64::max);
        assert!((peak_open - 1.0).abs() < 1e-9);
    }

    #[test]
    fn translation_moves_argmax_by_projected_pixels() {
        let r = renderer(joint_scene([0.0, 0.0, 3.0], vec![]), ODD, QuadratureConfig::default());
        let (f, z) = (10.0, 3.0);
        for k in 1..=3 {
            // Moving the camera by +dx shifts the image of a point by -f dx / z.
            let dx = k as f64 * z / f;
            let pose = SE3Pose::new(nalgebra::Matrix3::identity(), Vector3::new(dx, 0.0, 0.0));
            let h = render_heatmaps(&r, &HeatmapConfig::default(), &CinematicParams::new(pose, f, 0.0)).unwrap();
            assert_eq!(argmax(&h.channel(0)), 7 * 15 + 7 - k);
        }
    }

    fn ncc_shifted(a: &[f64], b: &[f64], res: Resolution, sa: i64, sb: i64) -> f64 {
        let (h, w) = (res.height as i64, res.width as i64);
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                let (r2, c2) = (r + sb, c + sa);
                if r2 < 0 || r2 >= h || c2 < 0 || c2 >= w {
                    continue;
                }
                let x = a[(r * w + c) as usize];
                let y = b[(r2 * w + c2) as usize];
                ab += x * y;
                aa += x * x;
                bb += y * y;
            }
        }
        ab / (aa * bb).sqrt().max(1e-300)
    }

    #[test]
    fn heatmap_is_translation_covariant() {
        let r = renderer(joint_scene([0.1, -0.2, 3.0], vec![]), RES, QuadratureConfig::default());
        let f = 12.0;
        let base = render_heatmaps(&r, &HeatmapConfig::default(), &identity_camera(f, 0.0)).unwrap().channel(0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..8 {
            let (a, b): (i64, i64) = (rng.gen_range(-4..=4), rng.gen_range(-4..=4));
            // Camera shift producing an image translation of (a, b) pixels.
            let pose = SE3Pose::new(nalgebra::Matrix3::identity(), Vector3::new(-a as f64 * 3.0 / f, -b as f64 * 3.0 / f, 0.0));
            let moved = render_heatmaps(&r, &HeatmapConfig::default(), &CinematicParams::new(pose, f, 0.0)).unwrap().channel(0);
            let ncc = ncc_shifted(&base, &moved, RES, a, b);
            assert!(ncc >= 0.99, "shift ({a}, {b}): ncc {ncc}");
        }
    }

    fn random_weights(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn heatmap_gradient_matches_fd() {
        let r = preset_renderer("scene_a", RES);
        let cfg = HeatmapConfig::default();
        let cam = front_view(20.0, 0.33);
        let x0 = cam.packed().to_vec();
        let w = random_weights(RES.pixels() * 13, 5);
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(x0.clone()));
        let h = heatmaps_on_tape(&mut tape, &r, &cfg, p, cam.base).unwrap();
        let flat = tape.record(crate::diffcore::OpKind::Reshape(vec![RES.pixels() * 13]), &[h]).unwrap();
        let wv = tape.leaf(w.clone());
        let prod = tape.mul(flat, wv).unwrap();
        let loss = tape.sum(prod).unwrap();
        let g = tape.grad(loss, &[p]).unwrap().remove(0);
        let mut f = |x: &[f64]| {
            let hm = render_heatmaps(&r, &cfg, &cam.with_packed(x))?;
            Ok(hm.data.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>())
        };
        let fd = central_difference(&mut f, &x0, 1e-4).unwrap();
        let err = relative_error(g.data(), &fd);
        assert!(err <= 1e-3, "{:?}\n{fd:?}\n{err}", g.data());
    }

    #[test]
    fn identical_cameras_on_static_scene_have_zero_flow() {
        let r = renderer(scene(vec![], vec![wall(3.0, 20.0)], None), RES, QuadratureConfig::default());
        let cam = CinematicParams::new(se3_exp(&[0.05, -0.1, 0.02, 0.1, 0.0, -0.2]), 14.0, 0.2);
        let fl = induced_flow(&r, &cam, &cam).unwrap();
        assert!(fl.data.max_abs() < 1e-9, "{}", fl.data.max_abs());
    }

    #[test]
    fn lateral_translation_gives_uniform_flow() {
        let quad = QuadratureConfig { n_samples: 256, ..Default::default() };
        let r = renderer(scene(vec![], vec![wall(3.0, 50.0)], None), RES, quad);
        let (f, dx, z) = (14.0, 0.1, 3.0);
        let a = identity_camera(f, 0.0);
        let b = CinematicParams::new(SE3Pose::new(nalgebra::Matrix3::identity(), Vector3::new(dx, 0.0, 0.0)), f, 0.0);
        let fl = induced_flow(&r, &a, &b).unwrap();
        let expect = -f * dx / z;
        for row in 0..RES.height {
            for col in 0..RES.width {
                let [u, v] = fl.at(row, col);
                assert!((u - expect).abs() <= 0.02 * expect.abs(), "({row},{col}) u {u} vs {expect}");
                assert!(v.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn time_advance_leaves_background_still() {
        let r = preset_renderer("scene_a", RES);
        let a = front_view(20.0, 0.2);
        let mut b = a;
        b.time = 0.6;
        let packed = r.render_packed(&a.base, &a.packed()).unwrap();
        let fl = induced_flow_from_render(&r, &a, &b, &packed).unwrap();
        let joints = r.scene().joints_at(0.2);
        let plain: Vec<Vector3<f64>> = joints.iter().map(|j| Vector3::from(*j)).collect();
        let bones = r.scene().bone_supports(&plain);
        let (mut still, mut moving) = (0, 0);
        for row in 0..RES.height {
            for col in 0..RES.width {
                let px = row * RES.width + col;
                let depth = packed.data()[px * 5 + 3];
                let ray = crate::geometry::generate_ray(RES.pixel_center(row, col), &a.pose(), a.focal, RES);
                let x = ray.origin + ray.direction * depth;
                let s = r.scene().sample_with([x.x, x.y, x.z], &joints, &bones);
                let [u, v] = fl.at(row, col);
                if s.actor / s.total().max(1e-300) <= ACTOR_GATE {
                    assert!(u.abs() < 1e-9 && v.abs() < 1e-9, "({row},{col})");
                    still += 1;
                } else if u.abs() + v.abs() > 0.1 {
                    moving += 1;
                }
            }
        }
        assert!(still > 0 && moving > 0, "{still} {moving}");
    }

    #[test]
    fn flow_gradient_matches_fd() {
        let r = preset_renderer("scene_a", RES);
        let a = front_view(20.0, 0.3);
        let b = CinematicParams { xi: [0.01, -0.02, 0.005, 0.05, 0.02, 0.04], ..front_view(21.0, 0.33) };
        let w = random_weights(RES.pixels() * 2, 9);
        let mut tape = Tape::new();
        let pa = tape.leaf(Tensor::vector(a.packed().to_vec()));
        let pb = tape.leaf(Tensor::vector(b.packed().to_vec()));
        let img = r.render_on_tape(&mut tape, pa, a.base).unwrap();
        let fl = flow_on_tape(&mut tape, &r, [pa, pb], [a.base, b.base], img).unwrap();
        let flat = tape.record(crate::diffcore::OpKind::Reshape(vec![RES.pixels() * 2]), &[fl]).unwrap();
        let wv = tape.leaf(w.clone());
        let prod = tape.mul(flat, wv).unwrap();
        let loss = tape.sum(prod).unwrap();
        let g = tape.grad(loss, &[pa, pb]).unwrap();
        let analytic: Vec<f64> = g[0].data().iter().chain(g[1].data()).copied().collect();
        let mut f = |x: &[f64]| {
            let fl = induced_flow(&r, &a.with_packed(&x[..8]), &b.with_packed(&x[8..]))?;
            Ok(fl.data.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>())
        };
        let x0: Vec<f64> = a.packed().iter().chain(b.packed().iter()).copied().collect();
        let fd = central_difference(&mut f, &x0, 1e-4).unwrap();
        let err = relative_error(&analytic, &fd);
        assert!(err <= 1e-3, "{analytic:?}\n{fd:?}\n{err}");
    }

    fn bilinear(fl: &FlowField, u: f64, v: f64) -> Option<[f64; 2]> {
        let (x, y) = (u - 0.5, v - 0.5);
        let (c0, r0) = (x.floor(), y.floor());
        let res = fl.resolution;
        if c0 < 0.0 || r0 < 0.0 || c0 + 1.0 >= res.width as f64 || r0 + 1.0 >= res.height as f64 {
            return None;
        }
        let (fx, fy) = (x - c0, y - r0);
        let (c0, r0) = (c0 as usize, r0 as usize);
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = fl.at(r0, c0)[k] * (1.0 - fx) * (1.0 - fy)
                + fl.at(r0, c0 + 1)[k] * fx * (1.0 - fy)
                + fl.at(r0 + 1, c0)[k] * (1.0 - fx) * fy
                + fl.at(r0 + 1, c0 + 1)[k] * fx * fy;
        }
        Some(out)
    }

    #[test]
    fn flow_composes_on_smooth_regions() {
        let quad = QuadratureConfig { n_samples: 256, ..Default::default() };
        let r = renderer(scene(vec![], vec![wall(3.0, 50.0)], None), RES, quad);
        let c0 = identity_camera(14.0, 0.0);
        let c1 = CinematicParams::new(se3_exp(&[0.0, 0.02, 0.0, 0.05, 0.0, 0.1]), 14.5, 0.0);
        let c2 = CinematicParams::new(se3_exp(&[0.01, 0.04, 0.0, 0.1, -0.03, 0.2]), 15.0, 0.0);
        let (f01, f12, f02) = (induced_flow(&r, &c0, &c1).unwrap(), induced_flow(&r, &c1, &c2).unwrap(), induced_flow(&r, &c0, &c2).unwrap());
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for row in 2..RES.height - 2 {
            for col in 2..RES.width - 2 {
                let [u, v] = RES.pixel_center(row, col);
                let a = f01.at(row, col);
                let Some(b) = bilinear(&f12, u + a[0], v + a[1]) else { continue };
                let d = f02.at(row, col);
                worst = worst.max(((a[0] + b[0] - d[0]).powi(2) + (a[1] + b[1] - d[1]).powi(2)).sqrt());
                checked += 1;
            }
        }
        assert!(checked > 100);
        assert!(worst <= 0.5, "{worst}");
    }

    fn clip_of(n: usize, moving: bool) -> Trajectory {
        Trajectory::from_params(
            (0..n)
                .map(|i| {
                    let mut p = front_view(20.0, i as f64 / (n - 1) as f64);
                    if moving {
                        p = CinematicParams::new(p.base.compose(&se3_exp(&[0.0, 0.01 * i as f64, 0.0, 0.03 * i as f64, 0.0, 0.0])), 20.0, p.time);
                    }
                    p
                })
                .collect(),
        )
    }

    #[test]
    fn reference_has_one_flow_fewer_than_frames() {
        let r = preset_renderer("scene_a", Resolution::new(12, 12));
        let clip = make_reference(&clip_of(20, true), &r, &HeatmapConfig::default()).unwrap();
        assert_eq!(clip.len(), 20);
        assert_eq!(clip.flows.len(), 19);
        assert_eq!(clip.source, ReferenceSource::InternalRender);
        let again = make_reference(&clip_of(20, true), &r, &HeatmapConfig::default()).unwrap();
        assert_eq!(clip.to_bytes(), again.to_bytes());
    }

    #[test]
    fn constant_trajectory_on_static_scene_has_zero_flows() {
        let r = renderer(scene(vec![], vec![wall(3.0, 20.0)], None), RES, QuadratureConfig::default());
        let cam = identity_camera(14.0, 0.5);
        let clip = make_reference(&Trajectory::from_params(vec![cam; 4]), &r, &HeatmapConfig::default()).unwrap();
        assert!(clip.flows.iter().all(|f| f.data.max_abs() < 1e-9));
    }

    #[test]
    fn archive_round_trip_and_errors() {
        let r = preset_renderer("scene_b", Resolution::new(10, 12));
        let clip = make_reference(&clip_of(3, true), &r, &HeatmapConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.ctrf");
        clip.save(&path).unwrap();
        let sigma = clip.frames[0].heatmaps.sigma_px;
        let back = load_reference(&path, 13, sigma).unwrap();
        assert_eq!(back.source, ReferenceSource::ExternalFile);
        assert_eq!(back.len(), 3);
        for (a, b) in clip.frames.iter().zip(&back.frames) {
            for (x, y) in a.heatmaps.data.data().iter().zip(b.heatmaps.data.data()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
        for (a, b) in clip.flows.iter().zip(&back.flows) {
            for (x, y) in a.data.data().iter().zip(b.data.data()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
        assert!(load_reference(&path, 12, sigma).is_err());

        let bytes = clip.to_bytes();
        let plane = 10 * 12 * 4;
        let err = ReferenceClip::from_bytes(&bytes[..bytes.len() - 2 * plane], sigma).unwrap_err();
        assert!(err.to_string().contains("missing flow"), "{err}");
        let err = ReferenceClip::from_bytes(&bytes[..100], sigma).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ReferenceClip::from_bytes(&bad, sigma).is_err());
    }
}
