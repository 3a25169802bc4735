use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use conformal_fdp_ffi::*;

fn last_error() -> String {
    let p = cfdp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn envelope_lifecycle_and_json_round_trip() {
    unsafe {
        let mut env: *mut CfdpEnvelope = ptr::null_mut();
        let status = cfdp_envelope_calibrate(
            50,
            40,
            200,
            0.1,
            cfdp_statistic_thc_default(),
            CfdpDirection::Upper,
            CfdpSamplerMode::Conformal,
            7,
            &mut env,
        );
        assert_eq!(status, CfdpStatus::Ok);
        let mut cutoff = 0.0;
        assert_eq!(cfdp_envelope_cutoff(env, &mut cutoff), CfdpStatus::Ok);
        assert!(cutoff.is_finite() && cutoff > 0.0);

        let mut json: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(cfdp_envelope_to_json(env, &mut json), CfdpStatus::Ok);
        let mut back: *mut CfdpEnvelope = ptr::null_mut();
        assert_eq!(cfdp_envelope_from_json(json, &mut back), CfdpStatus::Ok);
        cfdp_string_free(json);

        let ts: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let mut a = vec![0.0; ts.len()];
        let mut b = vec![0.0; ts.len()];
        assert_eq!(
            cfdp_envelope_eval(env, ts.as_ptr(), ts.len(), false, a.as_mut_ptr()),
            CfdpStatus::Ok
        );
        assert_eq!(
            cfdp_envelope_eval(back, ts.as_ptr(), ts.len(), false, b.as_mut_ptr()),
            CfdpStatus::Ok
        );
        assert_eq!(a, b);
        assert_eq!(
            cfdp_envelope_eval(env, ts.as_ptr(), ts.len(), true, b.as_mut_ptr()),
            CfdpStatus::Ok
        );
        assert!(a.iter().zip(&b).all(|(x, y)| y >= x));
        cfdp_envelope_free(env);
        cfdp_envelope_free(back);
        cfdp_envelope_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut env: *mut CfdpEnvelope = ptr::null_mut();
        let status = cfdp_envelope_calibrate(
            10,
            10,
            100,
            1.5,
            cfdp_statistic_thc_default(),
            CfdpDirection::Upper,
            CfdpSamplerMode::Conformal,
            1,
            &mut env,
        );
        assert_eq!(status, CfdpStatus::ConfigError);
        assert!(last_error().contains("delta"));
        assert!(env.is_null());

        let status = cfdp_envelope_calibrate(
            10,
            10,
            100,
            0.1,
            cfdp_statistic_thc_default(),
            CfdpDirection::Upper,
            CfdpSamplerMode::Conformal,
            1,
            ptr::null_mut(),
        );
        assert_eq!(status, CfdpStatus::NullPointer);

        let bad = CString::new("{not json").unwrap();
        assert_eq!(cfdp_envelope_from_json(bad.as_ptr(), &mut env), CfdpStatus::InputError);

        let p = [0.1, 1.5];
        let (mut t, mut k) = (0.0, 0usize);
        assert_eq!(
            cfdp_bh_threshold(p.as_ptr(), 2, 0.1, &mut t, &mut k),
            CfdpStatus::InputError
        );
    }
}

#[test]
fn family_bounds_respect_ordering() {
    unsafe {
        let mut fam: *mut CfdpFamily = ptr::null_mut();
        assert_eq!(
            cfdp_family_calibrate(30, 8, 300, 0.1, cfdp_statistic_thc_default(), 3, &mut fam),
            CfdpStatus::Ok
        );
        let mut m = 0;
        assert_eq!(cfdp_family_size(fam, &mut m), CfdpStatus::Ok);
        assert_eq!(m, 8);
        let p = [0.005, 0.01, 0.02, 0.3, 0.45, 0.6, 0.8, 0.95];
        let grid = [0.0, 0.01, 0.02, 0.1, 0.5, 1.0];
        let mut naive = [0.0; 6];
        let mut refined = [0.0; 6];
        let mut combined = [0.0; 6];
        let mut m0 = 0usize;
        let status = cfdp_fdp_bounds(
            fam,
            p.as_ptr(),
            8,
            30,
            grid.as_ptr(),
            6,
            naive.as_mut_ptr(),
            refined.as_mut_ptr(),
            combined.as_mut_ptr(),
            &mut m0,
        );
        assert_eq!(status, CfdpStatus::Ok);
        for i in 0..6 {
            assert!(combined[i] <= refined[i] && refined[i] <= naive[i]);
        }
        let mut m0_direct = 0usize;
        assert_eq!(cfdp_estimate_m0(fam, p.as_ptr(), 8, &mut m0_direct), CfdpStatus::Ok);
        assert_eq!(m0, m0_direct);
        // Wrong calibration size is a contract error.
        let status = cfdp_fdp_bounds(
            fam,
            p.as_ptr(),
            8,
            31,
            grid.as_ptr(),
            6,
            naive.as_mut_ptr(),
            refined.as_mut_ptr(),
            combined.as_mut_ptr(),
            ptr::null_mut(),
        );
        assert_eq!(status, CfdpStatus::InputError);
        cfdp_family_free(fam);
    }
}

#[test]
fn scalar_helpers() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(cfdp_ecdf_variance(1, 1, 0.5, &mut v), CfdpStatus::Ok);
        assert!((v - 0.25).abs() < 1e-12);
        let p = [0.01, 0.02, 0.2, 0.9];
        let (mut t, mut k) = (0.0, 0usize);
        assert_eq!(cfdp_bh_threshold(p.as_ptr(), 4, 0.1, &mut t, &mut k), CfdpStatus::Ok);
        assert_eq!((t, k), (0.02, 2));
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(crate_dir().join("include/conformal_fdp.h")).unwrap();
    for name in [
        "typedef struct CfdpEnvelope CfdpEnvelope;",
        "cfdp_envelope_calibrate",
        "cfdp_family_calibrate",
        "cfdp_fdp_bounds",
        "cfdp_last_error",
        "CFDP_STATUS_NUMERIC_ERROR = 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compile and run a small C program against the shared library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = lib_dir.join(format!(
        "{}conformal_fdp_ffi{}",
        std::env::consts::DLL_PREFIX,
        std::env::consts::DLL_SUFFIX
    ));
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no shared library at {} or no C compiler", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "conformal_fdp.h"
int main(void) {
    CfdpEnvelope *env = NULL;
    CfdpStatus s = cfdp_envelope_calibrate(100, 100, 100, 0.1, cfdp_statistic_thc_default(),
                                           CFDP_DIRECTION_UPPER, CFDP_SAMPLER_MODE_CONFORMAL, 1, &env);
    if (s != CFDP_STATUS_OK) { printf("error %s\n", cfdp_last_error()); return 1; }
    double t[2] = {0.02, 0.5}, g[2];
    if (cfdp_envelope_eval(env, t, 2, false, g) != CFDP_STATUS_OK) return 2;
    cfdp_envelope_free(env);
    s = cfdp_envelope_calibrate(10, 10, 100, 2.0, cfdp_statistic_thc_default(),
                                CFDP_DIRECTION_UPPER, CFDP_SAMPLER_MODE_CONFORMAL, 1, &env);
    if (s != CFDP_STATUS_CONFIG_ERROR || cfdp_last_error() == NULL) return 3;
    printf("ok %.6f %.6f\n", g[0], g[1]);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lconformal_fdp_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let output = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "C program failed: {stdout}");
    assert!(stdout.starts_with("ok "));
}
