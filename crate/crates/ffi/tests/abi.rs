use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use maryland_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; ml_last_error_length() + 1];
    assert_eq!(unsafe { ml_last_error_message(buf.as_mut_ptr(), buf.len()) }, MlStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ml_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn operator_round_trip() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(ml_sampling_tangent(1.0, &mut f), MlStatus::Ok);
        let mut v = 0.0;
        assert_eq!(ml_sampling_eval(f, 0.25, &mut v), MlStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);

        let omega = [(3.0 - 5f64.sqrt()) / 2.0];
        let (lo, hi) = ([-4i64], [4i64]);
        let mut op = ptr::null_mut();
        assert_eq!(ml_operator_build(f, omega.as_ptr(), lo.as_ptr(), hi.as_ptr(), 1, 1e-2, 0.2, &mut op), MlStatus::Ok);
        assert_eq!(ml_operator_dim(op), 9);

        let mut vals = [0.0; 9];
        assert_eq!(ml_operator_eigenvalues(op, vals.as_mut_ptr(), 8), MlStatus::BufferTooSmall);
        assert!(last_error().contains("need 9"));
        assert_eq!(ml_operator_eigenvalues(op, vals.as_mut_ptr(), 9), MlStatus::Ok);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));

        // The anchored series reproduces one of the eigenvalues.
        let mut e = 0.0;
        assert_eq!(ml_operator_series_energy(op, [0i64].as_ptr(), 1, 6, &mut e), MlStatus::Ok);
        let closest = vals.iter().map(|v| (v - e).abs()).fold(f64::INFINITY, f64::min);
        assert!(closest < 1e-10 * e.abs().max(1.0));
        assert_eq!(ml_last_error_length(), 0);

        ml_operator_free(op);
        ml_sampling_free(f);
        ml_operator_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(ml_sampling_eval(ptr::null(), 0.0, ptr::null_mut()), MlStatus::NullPointer);
        assert!(last_error().contains("f is NULL"));
        assert_eq!(ml_sampling_tangent(1.0, &mut f), MlStatus::Ok);
        let omega = [0.7];
        let mut op = ptr::null_mut();
        let s = ml_operator_build(f, omega.as_ptr(), [0i64].as_ptr(), [3i64].as_ptr(), 1, 1e-2, 0.0, &mut op);
        assert_eq!(s, MlStatus::InvalidArgument);
        assert!(op.is_null());
        assert!(last_error().contains("frequency"));
        let mut ex = ptr::null_mut();
        assert_eq!(ml_example_new(c"nope".as_ptr(), &mut ex), MlStatus::InvalidArgument);
        ml_sampling_free(f);
    }
}

#[test]
fn example_checklist_and_build() {
    unsafe {
        let mut ex = ptr::null_mut();
        assert_eq!(ml_example_new(c"example1".as_ptr(), &mut ex), MlStatus::Ok);
        let mut passed = false;
        assert_eq!(ml_example_verify(ex, 1e-2, 64, &mut passed), MlStatus::Ok);
        assert!(passed, "{}", last_error());
        let mut run = ptr::null_mut();
        assert_eq!(ml_example_build(ex, 1e-2, 64, &mut run), MlStatus::Ok);
        assert_eq!(ml_run_block_count(run), 1);
        let mut c = 0.0;
        assert_eq!(ml_run_separation(run, 0, &mut c), MlStatus::Ok);
        assert!(c > 0.5);
        assert_eq!(ml_run_separation(run, 3, &mut c), MlStatus::InvalidArgument);
        let mut d = 0.0;
        assert_eq!(ml_run_f2_prime(run, 0.01, &mut d), MlStatus::Ok);
        // On the flat window f2' is of order eps^2.
        assert!(d > 0.0 && d < 1e-2, "{d}");
        ml_run_free(run);
        ml_example_free(ex);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/maryland.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["ml_operator_build", "ml_last_error_message", "ML_STATUS_PANIC", "typedef struct MlRun MlRun"] {
        assert!(text.contains(name), "{name} missing from the header");
    }
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
