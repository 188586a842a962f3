use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use rainfuse_ffi::*;

fn last_error() -> String {
    let p = rf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn null_pointers_are_reported() {
    unsafe {
        assert_eq!(rf_config_load(ptr::null(), ptr::null_mut()), RfStatus::NullPointer);
        assert!(last_error().contains("out"));
        let mut cfg = ptr::null_mut();
        assert_eq!(rf_config_load(ptr::null(), &mut cfg), RfStatus::NullPointer);
        assert!(cfg.is_null());
        assert_eq!(rf_simulate(ptr::null()), RfStatus::NullPointer);
        assert_eq!(rf_samples_len(ptr::null()), 0);
        rf_config_free(ptr::null_mut());
        rf_samples_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_map_to_codes() {
    let bad = CString::new("[sampler]\nn_itre = 3\n").unwrap();
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(rf_config_parse(bad.as_ptr(), &mut cfg), RfStatus::Config);
        assert!(last_error().contains("n_itre"));
        let ok = CString::new("[grid]\nnx = 4\n").unwrap();
        assert_eq!(rf_config_parse(ok.as_ptr(), &mut cfg), RfStatus::Ok);
        assert!(rf_last_error().is_null());
        let p = CString::new("model9").unwrap();
        assert_eq!(rf_config_set_preset(cfg, p.as_ptr()), RfStatus::Config);
        // no output_dir
        assert_eq!(rf_simulate(cfg), RfStatus::Config);
        rf_config_free(cfg);
    }
}

#[test]
fn dic_and_car_entry_points() {
    let mut d = RfDic::default();
    unsafe {
        assert_eq!(rf_dic_from_parts(13092.0, 13092.0 - 5607.0, &mut d), RfStatus::Ok);
    }
    assert_eq!(d.dic, 18699.0);
    assert_eq!(d.p_d, 5607.0);

    let y = [0.1, -0.2, 0.3, 0.0];
    let m = [0.0; 4];
    let mut lp = 0.0;
    unsafe {
        assert_eq!(rf_car_logdensity(2, 2, 0.5, 2.0, y.as_ptr(), m.as_ptr(), &mut lp), RfStatus::Ok);
    }
    // dense oracle: 2x2 rook lattice is a 4-cycle, D = 2I
    let w = [[0., 1., 1., 0.], [1., 0., 0., 1.], [1., 0., 0., 1.], [0., 1., 1., 0.]];
    let q: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..4).map(|j| 2.0 * (if i == j { 2.0 } else { 0.0 } - 0.5 * w[i][j])).collect())
        .collect();
    let qm = rainfuse_dense(&q);
    let quad: f64 = (0..4).map(|i| (0..4).map(|j| y[i] * q[i][j] * y[j]).sum::<f64>()).sum();
    let expect = 0.5 * qm - 2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * quad;
    assert!((lp - expect).abs() < 1e-12, "{lp} vs {expect}");

    unsafe {
        assert_eq!(rf_car_logdensity(1, 2, 0.5, 2.0, y.as_ptr(), m.as_ptr(), &mut lp), RfStatus::Config);
        assert_eq!(rf_car_logdensity(2, 2, 1.5, 2.0, y.as_ptr(), m.as_ptr(), &mut lp), RfStatus::Domain);
    }
}

/// log-determinant by Gaussian elimination
fn rainfuse_dense(a: &[Vec<f64>]) -> f64 {
    let mut m = a.to_vec();
    let n = m.len();
    let mut ld = 0.0;
    for k in 0..n {
        ld += m[k][k].ln();
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    ld
}

#[test]
fn simulate_fit_predict_validate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "[grid]\nnx = 5\nny = 5\nT = 2\n[paths]\noutput_dir = \"{0}/out\"\ndata_dir = \"{0}/data\"\n\
         [sampler]\nn_iter = 200\nburn_in = 100\nadapt_end = 100\nthin = 5\n\
         [holdout]\nfraction = 0.2\nrepetitions = 2\n[simulate]\nn_gages = 6\n",
        dir.path().display()
    );
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let mut samples = ptr::null_mut();
    unsafe {
        assert_eq!(rf_config_parse(text.as_ptr(), &mut cfg), RfStatus::Ok);
        assert_eq!(rf_config_set_seed(cfg, 5), RfStatus::Ok);
        assert_eq!(rf_simulate(cfg), RfStatus::Ok, "{}", last_error());
        assert_eq!(rf_fit(cfg, &mut samples), RfStatus::Ok, "{}", last_error());
        assert_eq!(rf_samples_len(samples), 20);
        let mut s = RfSummary::default();
        let name = CString::new("c2").unwrap();
        assert_eq!(rf_samples_summary(samples, name.as_ptr(), &mut s), RfStatus::Ok);
        assert!(s.q025 <= s.median && s.median <= s.q975 && s.q025 > 0.0);
        let name = CString::new("nope").unwrap();
        assert_eq!(rf_samples_summary(samples, name.as_ptr(), &mut s), RfStatus::Domain);
        assert_eq!(rf_predict(cfg), RfStatus::Ok, "{}", last_error());
        let (mut g, mut r) = (0.0, 0.0);
        assert_eq!(rf_validate(cfg, &mut g, &mut r), RfStatus::Ok, "{}", last_error());
        assert!((0.0..=1.0).contains(&r));
        rf_samples_free(samples);
        rf_config_free(cfg);
    }
    assert!(dir.path().join("out/dic.txt").is_file());
    assert!(dir.path().join("out/coverage_report.csv").is_file());
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(rf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/rainfuse.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["rf_fit", "rf_predict", "rf_validate", "rf_last_error", "RF_STATUS_OK", "typedef struct RfConfig RfConfig"] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-xc", "-std=c99", "-Wall", "-Werror", header]).output() else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
