use std::ffi::CStr;
use std::path::Path;
use std::ptr;

use rmtcorr_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        rmt_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn constant(n: usize, u: f64) -> Vec<f64> {
    (0..n * n)
        .map(|k| if k / n == k % n { 1.0 } else { u })
        .collect()
}

fn handle_of(values: &[f64], n: usize, epoch_len: usize) -> *mut RmtCorrelation {
    let mut h = ptr::null_mut();
    let s = unsafe { rmt_correlation_from_matrix(values.as_ptr(), n, epoch_len, &mut h) };
    assert_eq!(s, RmtStatus::Ok);
    h
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(rmt_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn mp_bounds_q10() {
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(
        unsafe { rmt_mp_bounds(10.0, 1.0, &mut lo, &mut hi) },
        RmtStatus::Ok
    );
    assert!((lo - (1.0 - (0.1f64).sqrt()).powi(2)).abs() < 1e-12);
    assert!((hi - (1.0 + (0.1f64).sqrt()).powi(2)).abs() < 1e-12);
    assert_eq!(
        unsafe { rmt_mp_bounds(-1.0, 1.0, &mut lo, &mut hi) },
        RmtStatus::InvalidParameter
    );
    assert_eq!(
        unsafe { rmt_mp_bounds(1.0, 1.0, ptr::null_mut(), &mut hi) },
        RmtStatus::NullPointer
    );
}

#[test]
fn power_map_scalar() {
    assert!((rmt_power_map_value(0.04, 0.5) - 0.008).abs() < 1e-15);
    assert_eq!(rmt_power_map_value(-1.0, 0.7), -1.0);
}

#[test]
fn constant_matrix_spectrum_and_modes() {
    let n = 4;
    let h = handle_of(&constant(n, 0.5), n, 100);
    assert_eq!(unsafe { rmt_correlation_dim(h) }, 4);
    let mut eig = [0.0; 4];
    assert_eq!(
        unsafe { rmt_correlation_eigenvalues(h, eig.as_mut_ptr(), 4) },
        RmtStatus::Ok
    );
    for (got, want) in eig.iter().zip([2.5, 0.5, 0.5, 0.5]) {
        assert!((got - want).abs() < 1e-12);
    }
    let mut ng = 0;
    assert_eq!(
        unsafe { rmt_suggest_n_group(eig.as_ptr(), 4, 10.0, &mut ng) },
        RmtStatus::Ok
    );
    assert_eq!(ng, 1);

    let mut modes = ptr::null_mut();
    assert_eq!(
        unsafe { rmt_modes_decompose(h, 2, &mut modes) },
        RmtStatus::Ok
    );
    let mut sum = [0.0; 16];
    for which in [
        RmtComponent::Market,
        RmtComponent::Group,
        RmtComponent::Random,
    ] {
        let mut buf = vec![0.0; 16];
        assert_eq!(
            unsafe { rmt_modes_component(modes, which, buf.as_mut_ptr(), 16) },
            RmtStatus::Ok
        );
        for (s, b) in sum.iter_mut().zip(&buf) {
            *s += b;
        }
    }
    for (s, c) in sum.iter().zip(constant(n, 0.5)) {
        assert!((s - c).abs() < 1e-10);
    }
    let mut small = vec![0.0; 3];
    assert_eq!(
        unsafe { rmt_modes_component(modes, RmtComponent::Market, small.as_mut_ptr(), 3) },
        RmtStatus::BufferTooSmall
    );
    unsafe {
        rmt_modes_free(modes);
        rmt_correlation_free(h);
    }
}

#[test]
fn n_group_out_of_range_reports_message() {
    let h = handle_of(&constant(3, 0.2), 3, 50);
    let mut modes = ptr::null_mut();
    assert_eq!(
        unsafe { rmt_modes_decompose(h, 3, &mut modes) },
        RmtStatus::InvalidParameter
    );
    assert!(modes.is_null());
    assert!(last_error().contains("n_group"));
    unsafe { rmt_correlation_free(h) };
}

#[test]
fn epoch_from_returns_matches_core() {
    let (n, t) = (5, 40);
    let data: Vec<f64> = (0..n * t)
        .map(|k| ((k * 7919 % 113) as f64 / 113.0) - 0.5)
        .collect();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { rmt_correlation_epoch(data.as_ptr(), n, t, 39, 20, &mut h) },
        RmtStatus::Ok
    );
    let mut got = vec![0.0; n * n];
    assert_eq!(
        unsafe { rmt_correlation_values(h, got.as_mut_ptr(), n * n) },
        RmtStatus::Ok
    );
    let r =
        rmtcorr::ReturnMatrix::from_matrix(nalgebra::DMatrix::from_row_slice(n, t, &data)).unwrap();
    let want = rmtcorr::correlation::epoch_correlation(&r, 39, 20).unwrap();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(got[i * n + j], want.c[(i, j)]);
        }
    }
    let mut bad = ptr::null_mut();
    assert_eq!(
        unsafe { rmt_correlation_epoch(data.as_ptr(), n, t, 5, 20, &mut bad) },
        RmtStatus::InvalidParameter
    );
    unsafe { rmt_correlation_free(h) };
}

#[test]
fn stats_and_emerging() {
    let n = 6;
    let h = handle_of(&constant(n, 0.3), n, 4);
    let mut st = std::mem::MaybeUninit::<RmtEpochStats>::uninit();
    assert_eq!(
        unsafe { rmt_epoch_stats(h, 0.01, st.as_mut_ptr()) },
        RmtStatus::Ok
    );
    let st = unsafe { st.assume_init() };
    assert!((st.mean_c - 0.3).abs() < 1e-15);
    assert_eq!(st.variance, 0.0);
    assert!(st.kurtosis.is_nan());
    assert!((st.lambda_max - 2.5).abs() < 1e-12);
    assert!(st.neg_count >= 0);

    let (mut lmin, mut neg) = (0.0, 0usize);
    assert_eq!(
        unsafe { rmt_emerging_spectrum(h, 0.01, &mut lmin, &mut neg) },
        RmtStatus::Ok
    );
    assert_eq!(lmin, st.lambda_min_emerging);

    let mut mapped = ptr::null_mut();
    assert_eq!(
        unsafe { rmt_correlation_power_map(h, 1.0, &mut mapped) },
        RmtStatus::Ok
    );
    let mut v = vec![0.0; n * n];
    unsafe { rmt_correlation_values(mapped, v.as_mut_ptr(), v.len()) };
    assert!((v[1] - 0.09).abs() < 1e-15);
    assert_eq!(v[0], 1.0);
    unsafe {
        rmt_correlation_free(mapped);
        rmt_correlation_free(h);
    }
}

#[test]
fn mds_of_345_triangle() {
    let d = [0.0, 3.0, 4.0, 3.0, 0.0, 5.0, 4.0, 5.0, 0.0];
    let mut coords = [0.0; 9];
    let mut used = 0;
    assert_eq!(
        unsafe { rmt_classical_mds(d.as_ptr(), 3, 3, coords.as_mut_ptr(), 9, &mut used) },
        RmtStatus::Ok
    );
    assert!((2..=3).contains(&used));
    for a in 0..3 {
        for b in 0..3 {
            let dist: f64 = (0..3)
                .map(|k| (coords[a * 3 + k] - coords[b * 3 + k]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((dist - d[a * 3 + b]).abs() < 1e-9);
        }
    }
}

#[test]
fn transition_of_path() {
    let path = [0usize, 0, 1, 0, 1, 1];
    let mut p = [0.0; 4];
    assert_eq!(
        unsafe { rmt_transition_matrix(path.as_ptr(), path.len(), 2, p.as_mut_ptr(), 4) },
        RmtStatus::Ok
    );
    assert_eq!(p, [1.0 / 3.0, 2.0 / 3.0, 0.5, 0.5]);
    let bad = [0usize, 3];
    assert_eq!(
        unsafe { rmt_transition_matrix(bad.as_ptr(), 2, 2, p.as_mut_ptr(), 4) },
        RmtStatus::Data
    );
}

#[test]
fn null_handles_are_rejected() {
    let mut buf = [0.0; 4];
    assert_eq!(
        unsafe { rmt_correlation_values(ptr::null(), buf.as_mut_ptr(), 4) },
        RmtStatus::NullPointer
    );
    assert_eq!(unsafe { rmt_correlation_dim(ptr::null()) }, 0);
    unsafe {
        rmt_correlation_free(ptr::null_mut());
        rmt_modes_free(ptr::null_mut());
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/rmtcorr.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "rmt_correlation_epoch",
        "rmt_modes_free",
        "rmt_last_error",
        "RMT_STATUS_OK",
    ] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler found; syntax check skipped");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
