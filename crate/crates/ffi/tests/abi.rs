use std::ffi::{CStr, CString};
use std::ptr;

use arterial_risk_ffi::*;

fn last_error() -> String {
    let p = ar_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulated(n: usize, m: usize, seed: u64) -> *mut ArDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { ar_simulate_matched(n, m, seed, ptr::null(), 0, &mut ds) }, ArStatus::Ok);
    assert!(!ds.is_null());
    ds
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ar_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn rows_round_trip_through_likelihood_and_gradient() {
    // two strata, one control each, one feature: case beats control in both
    let rows = [1.0, 0.0, 2.0, 1.0];
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(ar_dataset_from_rows(rows.as_ptr(), 2, 1, 1, &mut ds), ArStatus::Ok);
        let (mut n, mut m, mut k) = (0, 0, 0);
        assert_eq!(ar_dataset_shape(ds, &mut n, &mut m, &mut k), ArStatus::Ok);
        assert_eq!((n, m, k), (2, 1, 1));

        let beta = [0.5];
        let mut ll = 0.0;
        assert_eq!(ar_cond_log_likelihood(ds, beta.as_ptr(), 1, &mut ll), ArStatus::Ok);
        let p = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((ll - 2.0 * p.ln()).abs() < 1e-12);

        let mut g = [0.0];
        assert_eq!(ar_cond_gradient(ds, beta.as_ptr(), 1, g.as_mut_ptr()), ArStatus::Ok);
        assert!((g[0] - 2.0 * (1.0 - p)).abs() < 1e-12);

        // all cases rank first: the likelihood has no maximum
        let (mut est, mut se) = ([0.0], [0.0]);
        let status = ar_cond_mle(ds, est.as_mut_ptr(), se.as_mut_ptr(), 1, ptr::null_mut());
        assert_eq!(status, ArStatus::Numerical);
        assert!(last_error().contains("unbounded"));
        ar_dataset_free(ds);
    }
}

#[test]
fn mle_recovers_simulated_coefficients() {
    let ds = simulated(400, 4, 3);
    let (mut est, mut se, mut ll) = ([0.0; 3], [0.0; 3], 0.0);
    unsafe {
        assert_eq!(ar_cond_mle(ds, est.as_mut_ptr(), se.as_mut_ptr(), 3, &mut ll), ArStatus::Ok);
        ar_dataset_free(ds);
    }
    let truth = [-0.03, 0.01, 0.8];
    for j in 0..3 {
        assert!((est[j] - truth[j]).abs() < 4.0 * se[j], "{j}: {} vs {}", est[j], truth[j]);
    }
    assert!(ll < 0.0);
}

#[test]
fn conditional_fit_fills_every_output() {
    let ds = simulated(60, 4, 9);
    let (mut mean, mut lo, mut hi) = ([0.0; 3], [0.0; 3], [0.0; 3]);
    let (mut dic, mut auc) = (0.0, 0.0);
    unsafe {
        let s = ar_fit_conditional(
            ds, 3000, 1000, 1, mean.as_mut_ptr(), lo.as_mut_ptr(), hi.as_mut_ptr(), 3, &mut dic, &mut auc,
        );
        assert_eq!(s, ArStatus::Ok, "{}", last_error());
        ar_dataset_free(ds);
    }
    for j in 0..3 {
        assert!(lo[j] < mean[j] && mean[j] < hi[j]);
    }
    assert!(dic > 0.0);
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn auc_counts_ties_as_half() {
    let scores = [0.9, 0.5, 0.5, 0.1];
    let labels = [1u8, 1, 0, 0];
    let mut auc = 0.0;
    assert_eq!(unsafe { ar_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc) }, ArStatus::Ok);
    assert_eq!(auc, 3.5 / 4.0);
    let one_class = [1u8; 4];
    assert_eq!(unsafe { ar_auc(scores.as_ptr(), one_class.as_ptr(), 4, &mut auc) }, ArStatus::Data);
}

#[test]
fn bad_arguments_report_status_and_message() {
    unsafe {
        let mut ll = 0.0;
        assert_eq!(ar_cond_log_likelihood(ptr::null(), ptr::null(), 0, &mut ll), ArStatus::NullPointer);
        assert!(last_error().contains("dataset"));

        let ds = simulated(5, 2, 1);
        let beta = [0.0; 2];
        assert_eq!(ar_cond_log_likelihood(ds, beta.as_ptr(), 2, &mut ll), ArStatus::InvalidArgument);
        assert!(last_error().contains("dimension"));
        ar_dataset_free(ds);

        let mut out = ptr::null_mut();
        assert_eq!(ar_simulate_matched(5, 2, 1, beta.as_ptr(), 2, &mut out), ArStatus::InvalidArgument);
        assert!(out.is_null());

        let path = CString::new("/nonexistent/dataset.csv").unwrap();
        assert_ne!(ar_dataset_load(path.as_ptr(), &mut out), ArStatus::Ok);
        assert!(last_error().contains("manifest"));
        ar_dataset_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/arterial_risk_ffi.h");
    for name in [
        "ar_last_error_message",
        "ar_version",
        "ar_dataset_load",
        "ar_dataset_from_rows",
        "ar_simulate_matched",
        "ar_dataset_free",
        "ar_dataset_shape",
        "ar_cond_log_likelihood",
        "ar_cond_gradient",
        "ar_cond_mle",
        "ar_auc",
        "ar_fit_conditional",
        "typedef struct ArDataset ArDataset",
        "AR_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
