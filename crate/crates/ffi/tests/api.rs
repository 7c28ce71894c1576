// SPDX-License-Identifier: Apache-2.0

// Reference values keep all digits of the high-precision evaluation.
#![allow(clippy::excessive_precision)]

use std::ffi::{CStr, CString};
use std::ptr;

use qdmsim_ffi::*;

fn table_params() -> QdmProtocolParams {
    QdmProtocolParams { t_init_ls: 20.0, t_init_conf: 20.0, t_ro_conf: 5.0, t_mw: 100.0, t_d: 0.1, t1: 5000.0 }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(qdm_last_error_message()) }.to_str().unwrap().to_owned()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn sensitivities_through_c_abi() {
    let p = table_params();
    let mut s = QdmSensitivity {
        eta_lcqdm: 0.0,
        eta_leibold: 0.0,
        eta_conventional: 0.0,
        ratio_leibold_over_lc: 0.0,
        ratio_conv_over_lc: 0.0,
    };
    assert_eq!(unsafe { qdm_evaluate(&p, &mut s) }, QdmStatus::Ok);
    assert!(rel(s.eta_lcqdm, 3.3413136104694049833) < 1e-12);
    assert!(rel(s.eta_leibold, 7.3980816473561486451) < 1e-12);
    assert!(rel(s.eta_conventional, 11.184811129384349153) < 1e-12);

    let mut eta = 0.0;
    assert_eq!(unsafe { qdm_eta(&p, QdmProtocol::Leibold, &mut eta) }, QdmStatus::Ok);
    assert_eq!(eta, s.eta_leibold);
    assert!((qdm_recurrent_prefactor() - 1.46211715726000975850).abs() < 1e-15);

    let mut n = 0usize;
    assert_eq!(unsafe { qdm_readouts_per_cycle(&p, QdmProtocol::Lcqdm, &mut n) }, QdmStatus::Ok);
    assert_eq!(n, 980);
}

#[test]
fn domain_errors_map_to_status() {
    let mut p = table_params();
    p.t1 = -1.0;
    let mut eta = 0.0;
    assert_eq!(unsafe { qdm_eta(&p, QdmProtocol::Lcqdm, &mut eta) }, QdmStatus::Domain);
    assert!(!last_error().is_empty());

    let model = qdm_model_new_default();
    let mut t = 0.0;
    assert_eq!(unsafe { qdm_model_init_time(model, 100.0, &mut t) }, QdmStatus::OutOfRange);
    assert_eq!(unsafe { qdm_model_init_time(model, 1.0, &mut t) }, QdmStatus::Ok);
    assert!(rel(t, 5.011872336272722850) < 1e-14);
    assert_eq!(unsafe { qdm_model_readout_time(model, 0.1, &mut t) }, QdmStatus::Ok);
    assert!(rel(t, 10.0) < 1e-14);
    unsafe { qdm_model_free(model) };

    let mut bad = ptr::null_mut();
    let st = unsafe { qdm_model_new(0.7, -0.9, 0.1, 0.7, -0.3, 0.0, 1.0, 30.0, 1.5, 1e-3, 10.0, &mut bad) };
    assert_eq!(st, QdmStatus::Domain);
    assert!(bad.is_null());
}

#[test]
fn config_handle_roundtrip() {
    let text = CString::new(include_str!("../../../configs/table1.conf")).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { qdm_config_parse(text.as_ptr(), &mut cfg) }, QdmStatus::Ok);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { qdm_config_to_text(cfg, &mut out) }, QdmStatus::Ok);
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { qdm_config_parse(out, &mut again) }, QdmStatus::Ok);
    let (mut a, mut b) = (table_params(), table_params());
    assert_eq!(unsafe { qdm_config_protocol_params(cfg, &mut a) }, QdmStatus::Ok);
    assert_eq!(unsafe { qdm_config_protocol_params(again, &mut b) }, QdmStatus::Ok);
    assert_eq!(a, b);
    assert_eq!(a.t_d, 0.1);
    unsafe {
        qdm_string_free(out);
        qdm_config_free(cfg);
        qdm_config_free(again);
    }

    let broken = CString::new("t_d = -1 us\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { qdm_config_parse(broken.as_ptr(), &mut cfg) }, QdmStatus::Config);
    assert!(last_error().contains("line"));
}

#[test]
fn plan_handle() {
    let p = table_params();
    let mut plan = ptr::null_mut();
    let st = unsafe { qdm_plan_new(100, 100, 1, 1.0, 1.0, &p, QdmProtocol::Lcqdm, -1.0, &mut plan) };
    assert_eq!(st, QdmStatus::Ok);
    let (mut total, mut cycles) = (0.0, 0usize);
    assert_eq!(unsafe { qdm_plan_total_time(plan, &mut total) }, QdmStatus::Ok);
    assert_eq!(unsafe { qdm_plan_cycle_count(plan, &mut cycles) }, QdmStatus::Ok);
    assert!((total - 52_320.0).abs() < 1e-9);
    assert_eq!(cycles, 11);
    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { qdm_plan_cycles_csv(plan, &mut csv) }, QdmStatus::Ok);
    let text = unsafe { CStr::from_ptr(csv) }.to_str().unwrap().to_owned();
    assert!(text.starts_with("cycle,voxel_start,voxel_end,start_us,duration_us\n"));
    assert_eq!(text.lines().count(), 12);
    unsafe {
        qdm_string_free(csv);
        qdm_plan_free(plan);
    }
}

#[test]
fn simulate_is_seeded() {
    let p = table_params();
    let model = qdm_model_new_default();
    let run = |seed| {
        let (mut eta, mut se) = (0.0, 0.0);
        let st = unsafe { qdm_simulate(&p, model, 1.0, 200, seed, QdmProtocol::Conventional, &mut eta, &mut se) };
        assert_eq!(st, QdmStatus::Ok, "{}", last_error());
        (eta, se)
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
    unsafe { qdm_model_free(model) };
}

#[test]
fn extraction_and_fit() {
    let tau = 10.0_f64;
    let t: Vec<f64> = (0..2001).map(|k| k as f64 * 0.05).collect();
    let r = vec![30.0; t.len()];
    let s: Vec<f64> = t.iter().map(|x| 30.0 * (1.0 - 0.03 * (-x / tau).exp())).collect();
    let (mut t_ro, mut t_init) = (0.0, 0.0);
    let st = unsafe { qdm_extract_times(t.as_ptr(), s.as_ptr(), r.as_ptr(), t.len(), 1.0, &mut t_ro, &mut t_init) };
    assert_eq!(st, QdmStatus::Ok, "{}", last_error());
    assert!((t_init - 3.0 * tau).abs() <= 0.05);
    assert!(rel(t_ro, 1.256431208626 * tau) < 0.01);

    let i = [0.01, 0.1, 1.0, 10.0];
    let d: Vec<f64> = i.iter().map(|&x: &f64| 10f64.powf(1.0 - 0.8 * x.log10() + 0.05 * x.log10().powi(2))).collect();
    let mut c = [0.0; 3];
    assert_eq!(unsafe { qdm_fit_log_quadratic(i.as_ptr(), d.as_ptr(), 4, c.as_mut_ptr()) }, QdmStatus::Ok);
    assert!((c[0] - 1.0).abs() < 1e-9 && (c[1] + 0.8).abs() < 1e-9 && (c[2] - 0.05).abs() < 1e-9);
    assert_eq!(unsafe { qdm_fit_log_quadratic(i.as_ptr(), d.as_ptr(), 2, c.as_mut_ptr()) }, QdmStatus::Underdetermined);
    assert_eq!(unsafe { qdm_fit_log_quadratic(ptr::null(), d.as_ptr(), 4, c.as_mut_ptr()) }, QdmStatus::NullPointer);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(qdm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
