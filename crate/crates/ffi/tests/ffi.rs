use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use suitfilter::{CorrectnessEstimator, SignalNormalizer, NUM_SIGNALS};
use suitfilter_ffi::*;

fn last_error() -> String {
    let p = sf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Weight on logit_diff_top2 only, so p_c = σ(z_top - z_second).
fn diff_estimator() -> CorrectnessEstimator {
    let mut w = [0.0; NUM_SIGNALS];
    w[8] = 1.0;
    CorrectnessEstimator::from_parameters(w, 0.0, SignalNormalizer::identity(), 0.0)
}

fn handle(est: &CorrectnessEstimator) -> *mut SfEstimator {
    let json = CString::new(est.to_json().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { sf_estimator_from_json(json.as_ptr(), &mut h) },
        SfStatus::Ok
    );
    assert!(!h.is_null());
    h
}

#[test]
fn extract_signals_matches_core() {
    let z = [0.3, -1.2, 2.5, 0.0];
    let mut out = [0.0; NUM_SIGNALS];
    assert_eq!(
        unsafe { sf_extract_signals(z.as_ptr(), z.len(), out.as_mut_ptr()) },
        SfStatus::Ok
    );
    let expected = suitfilter::signals::signals_from_logits(&z).unwrap();
    assert_eq!(out, expected.values);
}

#[test]
fn extract_signals_rejects_bad_input() {
    let mut out = [0.0; NUM_SIGNALS];
    let z = [1.0];
    assert_eq!(
        unsafe { sf_extract_signals(z.as_ptr(), 1, out.as_mut_ptr()) },
        SfStatus::InvalidInput
    );
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { sf_extract_signals(ptr::null(), 3, out.as_mut_ptr()) },
        SfStatus::NullPointer
    );
    assert!(last_error().contains("logits"));
}

#[test]
fn estimator_round_trip_and_predict() {
    let est = diff_estimator();
    let h = handle(&est);

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sf_estimator_to_json(h, &mut s) }, SfStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { sf_string_free(s) };
    assert_eq!(CorrectnessEstimator::from_json(&text).unwrap(), est);

    let logits = [2.0, 0.0, 0.0, 0.0, -1.0, 0.5];
    let mut p = [0.0; 3];
    assert_eq!(
        unsafe { sf_estimator_predict(h, logits.as_ptr(), 3, 2, p.as_mut_ptr()) },
        SfStatus::Ok
    );
    let sig = |d: f64| 1.0 / (1.0 + (-d).exp());
    for (got, d) in p.iter().zip([2.0, 0.0, 1.5]) {
        assert!((got - sig(d)).abs() < 1e-12);
    }
    unsafe { sf_estimator_free(h) };
}

#[test]
fn estimator_load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("est.json");
    diff_estimator().save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { sf_estimator_load(c.as_ptr(), &mut h) },
        SfStatus::Ok
    );
    unsafe { sf_estimator_free(h) };

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { sf_estimator_load(missing.as_ptr(), &mut h) },
        SfStatus::Io
    );
    assert!(h.is_null());
}

#[test]
fn malformed_json_is_parse_error() {
    let bad = CString::new("{\"weights\": 3}").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { sf_estimator_from_json(bad.as_ptr(), &mut h) },
        SfStatus::Parse
    );
    assert!(h.is_null());
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        sf_estimator_free(ptr::null_mut());
        sf_string_free(ptr::null_mut());
    }
}

#[test]
fn welch_worked_example() {
    let a = [0.5, 0.6, 0.7];
    let b = [0.8, 0.9, 1.0];
    let mut r = SfWelchResult::default();
    assert_eq!(
        unsafe { sf_welch_noninferiority(a.as_ptr(), 3, b.as_ptr(), 3, 0.0, &mut r) },
        SfStatus::Ok
    );
    assert!((r.t + 3.674).abs() < 1e-3);
    assert!((r.df - 4.0).abs() < 1e-9);
    assert!((r.p_one_sided - 0.0106).abs() < 5e-4);
}

#[test]
fn welch_degenerate_status() {
    let a = [0.5, 0.5];
    let mut r = SfWelchResult::default();
    assert_eq!(
        unsafe { sf_welch_noninferiority(a.as_ptr(), 2, a.as_ptr(), 2, 0.0, &mut r) },
        SfStatus::DegenerateTest
    );
}

#[test]
fn decide_identical_and_shifted() {
    let h = handle(&diff_estimator());
    let test: Vec<f64> = (0..40)
        .flat_map(|i| [(i % 7) as f64 * 0.3 - 0.5, 0.0])
        .collect();
    let mut d = SfDecision::default();
    let status = unsafe {
        sf_decide(
            h,
            test.as_ptr(),
            40,
            test.as_ptr(),
            40,
            2,
            0.0,
            0.05,
            &mut d,
        )
    };
    assert_eq!(status, SfStatus::Ok);
    assert_eq!(d.suitable, 0);
    assert!((d.p_value - 0.5).abs() < 1e-12);

    let user: Vec<f64> = test.chunks(2).flat_map(|c| [c[0] + 3.0, c[1]]).collect();
    let status = unsafe {
        sf_decide(
            h,
            test.as_ptr(),
            40,
            user.as_ptr(),
            40,
            2,
            0.0,
            0.05,
            &mut d,
        )
    };
    assert_eq!(status, SfStatus::Ok);
    assert_eq!(d.suitable, 1);
    assert!(d.p_value < 0.05);

    let status = unsafe { sf_decide(h, test.as_ptr(), 40, user.as_ptr(), 40, 2, 0.0, 1.5, &mut d) };
    assert_eq!(status, SfStatus::InvalidInput);
    unsafe { sf_estimator_free(h) };
}

#[test]
fn t_cdf_and_schedules() {
    let mut c = 0.0;
    assert_eq!(unsafe { sf_t_cdf(1.0, 1.0, &mut c) }, SfStatus::Ok);
    assert!((c - 0.75).abs() < 1e-15);
    assert_eq!(
        unsafe { sf_t_cdf(1.0, 0.0, &mut c) },
        SfStatus::InvalidInput
    );

    let mut th = [0.0; 5];
    assert_eq!(
        unsafe { sf_alpha_schedule(SfScheduleKind::Pocock, 5, 0.05, th.as_mut_ptr()) },
        SfStatus::Ok
    );
    assert_eq!(th, [0.01; 5]);
    let mut th = [0.0; 2];
    assert_eq!(
        unsafe { sf_alpha_schedule(SfScheduleKind::ObrienFleming, 2, 0.05, th.as_mut_ptr()) },
        SfStatus::Ok
    );
    assert!((th[0] - 0.02532).abs() < 1e-5);
    assert_eq!(th[1], 0.05);
}

#[test]
fn benjamini_hochberg_flags() {
    let p = [0.01, 0.04, 0.03, 0.5];
    let mut out = [9u8; 4];
    assert_eq!(
        unsafe { sf_benjamini_hochberg(p.as_ptr(), 4, 0.05, out.as_mut_ptr()) },
        SfStatus::Ok
    );
    assert_eq!(out, [1, 0, 0, 0]);
    let bad = [1.5];
    assert_eq!(
        unsafe { sf_benjamini_hochberg(bad.as_ptr(), 1, 0.05, out.as_mut_ptr()) },
        SfStatus::InvalidInput
    );
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(sf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// Compiles the C smoke program against the generated header and static library.
#[test]
fn c_header_compiles_and_links() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(
        header_dir.join("suitfilter.h").exists(),
        "header not generated"
    );

    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping link check");
        return;
    };
    // target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libsuitfilter_ffi.a");
    if !lib.exists() {
        eprintln!(
            "static library not at {}; skipping link check",
            lib.display()
        );
        return;
    }
    let out_dir = tempfile::tempdir().unwrap();
    let bin = out_dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&bin).output().unwrap();
    assert!(
        run.status.success(),
        "smoke exited with {:?}",
        run.status.code()
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
