use std::ffi::{CStr, CString};
use std::ptr;

use lmpanel_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lm_last_error()) }.to_string_lossy().into_owned()
}

/// Two-state toy panel: 8 configurations over 3 binary occasions.
fn toy_dataset() -> *mut LmDataset {
    let mut y = Vec::new();
    let mut freq = Vec::new();
    for code in 0..8usize {
        y.extend([(code >> 2) & 1, (code >> 1) & 1, code & 1]);
        freq.push([30, 6, 5, 9, 4, 7, 8, 31][code]);
    }
    let cats = [2usize];
    let mut ds = ptr::null_mut();
    let st = unsafe {
        lm_dataset_new(
            y.as_ptr(),
            8,
            3,
            1,
            freq.as_ptr(),
            ptr::null(),
            0,
            ptr::null(),
            0,
            cats.as_ptr(),
            &mut ds,
        )
    };
    assert_eq!(st, LmStatus::Ok, "{}", last_error());
    ds
}

#[test]
fn information_criteria_match_hand_arithmetic() {
    let (mut a, mut b) = (0.0, 0.0);
    let st = unsafe { lm_information_criteria(-100.0, 5, 100, &mut a, &mut b) };
    assert_eq!(st, LmStatus::Ok);
    assert_eq!(a, 210.0);
    assert!((b - (200.0 + 5.0 * 100f64.ln())).abs() < 1e-12);
}

#[test]
fn null_output_is_reported() {
    let st = unsafe { lm_information_criteria(0.0, 1, 1, ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, LmStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn fit_decode_and_json_round_trip() {
    let ds = toy_dataset();
    let (mut n, mut t, mut total) = (0usize, 0usize, 0u64);
    unsafe {
        assert_eq!(lm_dataset_n_configs(ds, &mut n), LmStatus::Ok);
        assert_eq!(lm_dataset_n_occasions(ds, &mut t), LmStatus::Ok);
        assert_eq!(lm_dataset_n_total(ds, &mut total), LmStatus::Ok);
    }
    assert_eq!((n, t, total), (8, 3, 100));

    let variant = CString::new("basic").unwrap();
    let cfg = CString::new(r#"{"k": 2, "transitions": "homogeneous"}"#).unwrap();
    let mut fit = ptr::null_mut();
    let st = unsafe { lm_fit(ds, variant.as_ptr(), cfg.as_ptr(), &mut fit) };
    assert_eq!(st, LmStatus::Ok, "{}", last_error());

    let (mut ll, mut np, mut a, mut b, mut conv) = (0.0, 0usize, 0.0, 0.0, 0i32);
    unsafe {
        assert_eq!(lm_fit_summary(fit, &mut ll, &mut np, &mut a, &mut b, &mut conv), LmStatus::Ok);
    }
    assert_eq!(np, 1 + 2 + 2);
    assert_eq!(conv, 1);
    assert!((a - (-2.0 * ll + 10.0)).abs() < 1e-9);

    let mut ul = vec![0usize; n * t];
    let mut ug = vec![0usize; n * t];
    let st = unsafe { lm_fit_decode(fit, ds, ul.as_mut_ptr(), ug.as_mut_ptr(), n * t) };
    assert_eq!(st, LmStatus::Ok, "{}", last_error());
    assert!(ul.iter().chain(&ug).all(|&s| s == 1 || s == 2));

    let st = unsafe { lm_fit_decode(fit, ds, ul.as_mut_ptr(), ug.as_mut_ptr(), 3) };
    assert_eq!(st, LmStatus::BufferTooSmall);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { lm_fit_to_json(fit, &mut json) }, LmStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { lm_fit_from_json(json, &mut back) }, LmStatus::Ok);
    let mut ll2 = 0.0;
    unsafe {
        lm_fit_summary(back, &mut ll2, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        lm_string_free(json);
        lm_fit_free(back);
        lm_fit_free(fit);
        lm_dataset_free(ds);
    }
    assert_eq!(ll, ll2);
}

#[test]
fn bad_arguments_map_to_status_codes() {
    let ds = toy_dataset();
    let mut fit = ptr::null_mut();
    let bad = CString::new("nonsense").unwrap();
    assert_eq!(
        unsafe { lm_fit(ds, bad.as_ptr(), ptr::null(), &mut fit) },
        LmStatus::InvalidArgument
    );
    assert!(fit.is_null());
    assert!(last_error().contains("nonsense"));

    let variant = CString::new("cov-manifest").unwrap();
    let cfg = CString::new(r#"{"k": 2, "bogus": 1}"#).unwrap();
    assert_eq!(
        unsafe { lm_fit(ds, variant.as_ptr(), cfg.as_ptr(), &mut fit) },
        LmStatus::InvalidArgument
    );
    unsafe { lm_dataset_free(ds) };
}

#[test]
fn invalid_codes_are_data_errors() {
    let y = [0usize, 5];
    let cats = [2usize];
    let mut ds = ptr::null_mut();
    let st = unsafe {
        lm_dataset_new(y.as_ptr(), 1, 2, 1, ptr::null(), ptr::null(), 0, ptr::null(), 0, cats.as_ptr(), &mut ds)
    };
    assert_eq!(st, LmStatus::Data);
    assert!(ds.is_null());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lmpanel.h")).unwrap();
    for name in [
        "lm_last_error",
        "lm_version",
        "lm_information_criteria",
        "lm_dataset_new",
        "lm_dataset_read_csv",
        "lm_dataset_free",
        "lm_fit",
        "lm_fit_summary",
        "lm_fit_decode",
        "lm_fit_to_json",
        "lm_fit_from_json",
        "lm_fit_free",
        "lm_string_free",
        "LM_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"lmpanel.h\"\nint main(void) { double a, b; return lm_information_criteria(-1.0, 1, 10, &a, &b) == LM_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler found; header compile check skipped"),
    }
}
