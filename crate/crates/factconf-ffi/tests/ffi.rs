use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use factconf_ffi::*;

fn last_error() -> String {
    let p = fc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulated(name: &str, seed: u64) -> *mut FcPanel {
    let name = CString::new(name).unwrap();
    let mut panel = ptr::null_mut();
    assert_eq!(unsafe { fc_panel_simulate(name.as_ptr(), seed, &mut panel) }, FcStatus::Ok);
    panel
}

#[test]
fn fit_through_handles() {
    let panel = simulated("linear-fixed", 1);
    let (mut n, mut t) = (0, 0);
    assert_eq!(unsafe { fc_panel_dims(panel, &mut n, &mut t) }, FcStatus::Ok);
    assert_eq!((n, t), (50, 100));
    let mut cfg = fc_config_default();
    cfg.rank = 3;
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { fc_estimate(panel, &cfg, &mut est) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_estimate_n_beta(est) }, 1);
    let mut beta = f64::NAN;
    assert_eq!(unsafe { fc_estimate_beta(est, 0, &mut beta) }, FcStatus::Ok);
    assert!((beta - 1.0).abs() < 0.3, "beta {beta}");
    let json = unsafe { CStr::from_ptr(fc_estimate_json(est)) }.to_str().unwrap();
    let doc: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(doc["method"], "FC");
    unsafe {
        fc_estimate_free(est);
        fc_panel_free(panel);
    }
}

#[test]
fn interference_panel_reports_two_slopes() {
    let panel = simulated("interference", 2);
    let mut cfg = fc_config_default();
    cfg.rank = 4;
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { fc_estimate(panel, &cfg, &mut est) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_estimate_n_beta(est) }, 2);
    unsafe {
        fc_estimate_free(est);
        fc_panel_free(panel);
    }
}

#[test]
fn panel_from_arrays_and_bootstrap_interval() {
    // Two units, y = 2 d + x exactly, so every resample returns the same slope.
    let (n, t) = (2usize, 40usize);
    let d: Vec<f64> = (0..n * t).map(|k| ((k * 7919) % 97) as f64 / 10.0).collect();
    let x: Vec<f64> = (0..n * t).map(|k| ((k * 104729) % 89) as f64 / 10.0).collect();
    let y: Vec<f64> = d.iter().zip(&x).map(|(d, x)| 2.0 * d + x).collect();
    let mut panel = ptr::null_mut();
    let status = unsafe { fc_panel_new(n, t, d.as_ptr(), y.as_ptr(), 1, x.as_ptr(), &mut panel) };
    assert_eq!(status, FcStatus::Ok);
    let mut cfg = fc_config_default();
    cfg.method = FcMethod::Ife;
    cfg.rank = 0;
    cfg.bootstrap_reps = 20;
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { fc_estimate(panel, &cfg, &mut est) }, FcStatus::Ok, "{}", last_error());
    let name = CString::new("beta.direct").unwrap();
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { fc_estimate_interval(est, name.as_ptr(), &mut lo, &mut hi) }, FcStatus::Ok);
    assert!((lo - 2.0).abs() < 1e-8 && (hi - 2.0).abs() < 1e-8, "[{lo}, {hi}]");
    let missing = CString::new("nope").unwrap();
    assert_eq!(unsafe { fc_estimate_interval(est, missing.as_ptr(), &mut lo, &mut hi) }, FcStatus::InvalidArgument);
    assert!(last_error().contains("nope"));
    unsafe {
        fc_estimate_free(est);
        fc_panel_free(panel);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut panel = ptr::null_mut();
    assert_eq!(
        unsafe { fc_panel_new(2, 2, ptr::null(), ptr::null(), 0, ptr::null(), &mut panel) },
        FcStatus::NullPointer
    );
    let bad = CString::new("no-such-scenario").unwrap();
    assert_eq!(unsafe { fc_panel_simulate(bad.as_ptr(), 0, &mut panel) }, FcStatus::InvalidArgument);
    let dir = CString::new("/nonexistent/panel").unwrap();
    assert_eq!(unsafe { fc_panel_load(dir.as_ptr(), &mut panel) }, FcStatus::InvalidData);
    assert!(last_error().contains("/nonexistent/panel"));

    let panel = simulated("linear-fixed", 0);
    let mut cfg = fc_config_default();
    cfg.rank = 0;
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { fc_estimate(panel, &cfg, &mut est) }, FcStatus::InvalidArgument);
    assert!(est.is_null());
    cfg.rank = 3;
    cfg.learner = FcLearner::Spline;
    cfg.learner_param = 2.5;
    assert_eq!(unsafe { fc_estimate(panel, &cfg, &mut est) }, FcStatus::InvalidArgument);
    assert_eq!(unsafe { fc_panel_set_knn(ptr::null_mut(), 3) }, FcStatus::NullPointer);
    unsafe {
        fc_panel_free(panel);
        fc_panel_free(ptr::null_mut());
        fc_estimate_free(ptr::null_mut());
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(fc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/factconf.h");
    assert!(std::fs::read_to_string(&header).unwrap().contains("fc_estimate_interval"));
    // Test binaries live in <target>/<profile>/deps; the static library sits one level up.
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().parent().unwrap().join("libfactconf_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link check: no static library or C compiler");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let beta: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(text.starts_with("1 ") && (beta - 1.0).abs() < 0.3, "{text}");
}
