use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use regionmix_ffi::*;

const TOY2: &str = include_str!("../../core/fixtures/toy2.json");
const TOY2_DAGGER: &str = include_str!("../../core/fixtures/toy2_dagger.json");

struct Handle(*mut RmModel);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { rm_model_free(self.0) }
    }
}

fn load(text: &str) -> Handle {
    let c = CString::new(text).unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { rm_model_from_json(c.as_ptr(), &mut m) };
    assert_eq!(st, RmStatus::Ok);
    assert!(!m.is_null());
    Handle(m)
}

fn last_error() -> String {
    let p = rm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn toy2_quantities() {
    let h = load(TOY2);
    let mut n = 0usize;
    unsafe {
        assert_eq!(rm_model_n_symbols(h.0, &mut n), RmStatus::Ok);
        assert_eq!(n, 4);
        assert_eq!(rm_model_n_starts(h.0, &mut n), RmStatus::Ok);
        assert_eq!(n, 2);
        let mut e = [0.0; 2];
        assert_eq!(rm_expected_times(h.0, e.as_mut_ptr(), 2), RmStatus::Ok);
        assert!(e.iter().all(|x| (x - 3.0).abs() < 1e-12));
        let mut pi = [0.0; 2];
        assert_eq!(rm_weights(h.0, pi.as_mut_ptr(), 2), RmStatus::Ok);
        assert!(pi.iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-12));
        let mut d = 1.0;
        assert_eq!(rm_stationarity_defect(h.0, 3, &mut d), RmStatus::Ok);
        assert!(d <= 1e-9);
    }
}

#[test]
fn cylinder_by_name() {
    let h = load(TOY2);
    let name = CString::new("a").unwrap();
    let mut a = 0usize;
    let mut p = 0.0;
    unsafe {
        assert_eq!(rm_model_symbol_index(h.0, name.as_ptr(), &mut a), RmStatus::Ok);
        assert_eq!(rm_kac_cylinder(h.0, &a, 1, &mut p), RmStatus::Ok);
    }
    assert!((p - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn dagger_config() {
    let h = load(TOY2_DAGGER);
    let mut e = [0.0; 2];
    let mut pi = [0.0; 2];
    unsafe {
        assert_eq!(rm_expected_times(h.0, e.as_mut_ptr(), 2), RmStatus::Ok);
        assert_eq!(rm_weights(h.0, pi.as_mut_ptr(), 2), RmStatus::Ok);
    }
    assert!(e.iter().all(|x| (x - 9.0).abs() < 1e-12));
    assert!(pi.iter().all(|x| (x - 1.0 / 18.0).abs() < 1e-12));
}

#[test]
fn sampling_is_deterministic() {
    let h = load(TOY2);
    let mut a = vec![0usize; 500];
    let mut b = vec![0usize; 500];
    unsafe {
        assert_eq!(rm_sample_regenerated(h.0, 3, a.as_mut_ptr(), 500), RmStatus::Ok);
        assert_eq!(rm_sample_regenerated(h.0, 3, b.as_mut_ptr(), 500), RmStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(rm_sample_stationary(h.0, 3, a.as_mut_ptr(), 500), RmStatus::Ok);
        assert_eq!(rm_sample_stationary(h.0, 3, b.as_mut_ptr(), 500), RmStatus::Ok);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|&s| s < 4));
}

#[test]
fn error_paths() {
    let bad = CString::new(r#"{"alphabet": ["s","t"], "start_set": ["s","t"]}"#).unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { rm_model_from_json(bad.as_ptr(), &mut m) };
    assert_eq!(st, RmStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("/laws"));

    let h = load(TOY2);
    assert!(rm_last_error_message().is_null());
    let mut small = [0.0; 1];
    let mut p = 0.0;
    unsafe {
        assert_eq!(rm_weights(h.0, small.as_mut_ptr(), 1), RmStatus::BufferTooSmall);
        assert_eq!(rm_weights(ptr::null(), small.as_mut_ptr(), 1), RmStatus::NullPointer);
        let w = [0usize; 0];
        assert_eq!(rm_kac_cylinder(h.0, w.as_ptr(), 0, &mut p), RmStatus::InvalidArgument);
        let w = [17usize];
        assert_ne!(rm_kac_cylinder(h.0, w.as_ptr(), 1, &mut p), RmStatus::Ok);
        let nope = CString::new("zz").unwrap();
        let mut i = 0usize;
        assert_eq!(rm_model_symbol_index(h.0, nope.as_ptr(), &mut i), RmStatus::InvalidArgument);
        rm_model_free(ptr::null_mut());
    }
    let s = unsafe { CStr::from_ptr(rm_status_str(RmStatus::BufferTooSmall)) };
    assert_eq!(s.to_str().unwrap(), "buffer too small");
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/regionmix.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["rm_model_from_json", "rm_model_free", "rm_kac_cylinder", "rm_last_error_message"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
