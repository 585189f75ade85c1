use std::ffi::{c_char, CStr, CString};
use std::ptr;

use cinetransfer_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        ct_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn scene_a() -> *mut CtScene {
    let name = CString::new("scene_a").unwrap();
    let mut scene = ptr::null_mut();
    assert_eq!(unsafe { ct_scene_preset(name.as_ptr(), &mut scene) }, CtStatus::Ok);
    scene
}

fn front(focal: f64, time: f64) -> CtCamera {
    let mut cam = CtCamera { rotation: [0.0; 9], translation: [0.0; 3], focal: 0.0, time: 0.0 };
    let (eye, target) = ([0.0, 1.1, -3.0], [0.0, 1.0, 0.0]);
    assert_eq!(unsafe { ct_camera_look_at(eye.as_ptr(), target.as_ptr(), focal, time, &mut cam) }, CtStatus::Ok);
    cam
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ct_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn scene_queries_and_bad_names() {
    let scene = scene_a();
    let (mut d, mut j) = (0.0, 0usize);
    unsafe {
        assert_eq!(ct_scene_diameter(scene, &mut d), CtStatus::Ok);
        assert_eq!(ct_scene_joint_count(scene, &mut j), CtStatus::Ok);
        ct_scene_free(scene);
    }
    assert!(d > 1.0 && j > 0);

    let bogus = CString::new("scene_z").unwrap();
    let mut out = ptr::null_mut();
    assert_ne!(unsafe { ct_scene_preset(bogus.as_ptr(), &mut out) }, CtStatus::Ok);
    assert!(out.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_reported() {
    let mut d = 0.0;
    assert_eq!(unsafe { ct_scene_diameter(ptr::null(), &mut d) }, CtStatus::NullPointer);
    assert!(last_error().contains("scene"));
    assert_eq!(unsafe { ct_scene_preset(ptr::null(), ptr::null_mut()) }, CtStatus::NullPointer);
    // Freeing null is a no-op.
    unsafe {
        ct_scene_free(ptr::null_mut());
        ct_renderer_free(ptr::null_mut());
        ct_trajectory_free(ptr::null_mut());
        ct_scenario_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_and_reports_length() {
    let mut d = 0.0;
    unsafe { ct_scene_diameter(ptr::null(), &mut d) };
    let full = unsafe { ct_last_error(ptr::null_mut(), 0) };
    let mut small = [0 as c_char; 4];
    assert_eq!(unsafe { ct_last_error(small.as_mut_ptr(), 4) }, full);
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_bytes().len(), 3);
}

#[test]
fn render_fills_the_buffer() {
    let scene = scene_a();
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { ct_renderer_new(scene, 8, 8, 16, &mut r) }, CtStatus::Ok);
    // The renderer keeps its own reference to the scene.
    unsafe { ct_scene_free(scene) };
    let cam = front(8.0, 0.3);
    let mut rgb = vec![-1.0; 8 * 8 * 3];
    assert_eq!(unsafe { ct_render(r, &cam, rgb.as_mut_ptr(), rgb.len()) }, CtStatus::Ok);
    assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(unsafe { ct_render(r, &cam, rgb.as_mut_ptr(), 10) }, CtStatus::BufferTooSmall);
    let bad = CtCamera { focal: -1.0, ..cam };
    assert_eq!(unsafe { ct_render(r, &bad, rgb.as_mut_ptr(), rgb.len()) }, CtStatus::InvalidArgument);
    unsafe { ct_renderer_free(r) };
}

#[test]
fn trajectory_round_trip_and_ate() {
    let cams = [front(60.0, 0.2), front(60.0, 0.4), front(66.0, 0.6)];
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { ct_trajectory_from_cameras(cams.as_ptr(), 3, &mut a) }, CtStatus::Ok);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.txt").to_str().unwrap()).unwrap();
    let mut b = ptr::null_mut();
    let (mut n, mut ate) = (0usize, f64::NAN);
    let mut cam = cams[0];
    unsafe {
        assert_eq!(ct_trajectory_save(a, path.as_ptr()), CtStatus::Ok);
        assert_eq!(ct_trajectory_load(path.as_ptr(), &mut b), CtStatus::Ok);
        assert_eq!(ct_trajectory_len(b, &mut n), CtStatus::Ok);
        assert_eq!(ct_trajectory_get(b, 2, &mut cam), CtStatus::Ok);
        assert_eq!(ct_trajectory_get(b, 3, &mut cam), CtStatus::OutOfRange);
        assert_eq!(ct_rmse_ate(a, b, &mut ate), CtStatus::Ok);
        ct_trajectory_free(a);
        ct_trajectory_free(b);
    }
    assert_eq!(n, 3);
    assert_eq!(cam.focal, 66.0);
    assert!(ate < 1e-9);
}

#[test]
fn copy_task_through_the_abi() {
    let text = CString::new(
        "name = \"ffi\"\nresolution = \"16x16\"\n[quadrature]\nn_samples = 16\n[optim.ot]\ngrid = [8, 8]\n[motion]\nkind = \"arc\"\nframes = 2\nfocal = 15.0\n",
    )
    .unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ct_scenario_parse(text.as_ptr(), &mut s) }, CtStatus::Ok);
    assert_eq!(unsafe { ct_scenario_configure(s, 3, 2) }, CtStatus::Ok);
    let mut report = CtReport { success: false, rmse_ate: 0.0, pixel_error: 0.0, joint_error: 0.0, iterations: 0, peak_active_pixels: 0 };
    assert_eq!(unsafe { ct_copy_task(s, ptr::null(), &mut report) }, CtStatus::Ok);
    unsafe { ct_scenario_free(s) };
    assert!(report.success);
    assert!(report.iterations <= 2);
    assert!(report.rmse_ate.is_finite() && report.pixel_error.is_finite());

    let broken = CString::new("name = \"x\"\nresolution = \"16x16\"\n[motion]\nkind = \"arc\"\n").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ct_scenario_parse(broken.as_ptr(), &mut s) }, CtStatus::InvalidArgument);
    assert!(last_error().contains("ot.grid"));
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cinetransfer.h")).unwrap();
    for sym in ["ct_render", "ct_copy_task", "CT_STATUS_OK", "typedef struct CtScene CtScene"] {
        assert!(h.contains(sym), "{sym} missing from header");
    }
}
