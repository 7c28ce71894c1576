// SPDX-License-Identifier: Apache-2.0

//! C ABI over `qdmsim`.
//!
//! Every fallible call returns a [`QdmStatus`]; on failure the message is
//! available from [`qdm_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned
//! through `char **` out-parameters are owned by the caller and released
//! with [`qdm_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};

use qdmsim::calibration::{CalibrationTrace, ContrastMode, TraceSample, extract_times, fit_log_quadratic};
use qdmsim::config::{RunConfig, parse_config};
use qdmsim::montecarlo::{Counting, SimConfig, simulate_protocol};
use qdmsim::scanplan::{PlanSettings, ScanPlan, VoxelGrid, plan_acquisition};
use qdmsim::sensitivity::{SensitivityResult, eta_conventional, eta_lcqdm, eta_leibold, recurrent_prefactor};
use qdmsim::sequence::readouts_per_cycle;
use qdmsim::{Error, Intensity, LogQuadraticCurve, PhotophysicsModel, ProtocolParams, ProtocolTag};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdmStatus {
    Ok = 0,
    Domain = 1,
    OutOfRange = 2,
    Extraction = 3,
    Underdetermined = 4,
    Index = 5,
    Config = 6,
    Usage = 7,
    Io = 8,
    NullPointer = 9,
    InvalidUtf8 = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdmProtocol {
    Lcqdm = 0,
    Leibold = 1,
    Conventional = 2,
}

impl From<QdmProtocol> for ProtocolTag {
    fn from(p: QdmProtocol) -> Self {
        match p {
            QdmProtocol::Lcqdm => ProtocolTag::LcQdm,
            QdmProtocol::Leibold => ProtocolTag::Leibold,
            QdmProtocol::Conventional => ProtocolTag::Conventional,
        }
    }
}

/// Protocol timings in microseconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdmProtocolParams {
    pub t_init_ls: f64,
    pub t_init_conf: f64,
    pub t_ro_conf: f64,
    pub t_mw: f64,
    pub t_d: f64,
    pub t1: f64,
}

impl From<QdmProtocolParams> for ProtocolParams {
    fn from(p: QdmProtocolParams) -> Self {
        ProtocolParams {
            t_init_ls: p.t_init_ls,
            t_init_conf: p.t_init_conf,
            t_ro_conf: p.t_ro_conf,
            t_mw: p.t_mw,
            t_d: p.t_d,
            t1: p.t1,
        }
    }
}

impl From<ProtocolParams> for QdmProtocolParams {
    fn from(p: ProtocolParams) -> Self {
        QdmProtocolParams {
            t_init_ls: p.t_init_ls,
            t_init_conf: p.t_init_conf,
            t_ro_conf: p.t_ro_conf,
            t_mw: p.t_mw,
            t_d: p.t_d,
            t1: p.t1,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdmSensitivity {
    pub eta_lcqdm: f64,
    pub eta_leibold: f64,
    pub eta_conventional: f64,
    pub ratio_leibold_over_lc: f64,
    pub ratio_conv_over_lc: f64,
}

/// Opaque photophysics model.
pub struct QdmModel(PhotophysicsModel);

/// Opaque parsed run configuration.
pub struct QdmConfig(RunConfig);

/// Opaque scan plan.
pub struct QdmPlan(ScanPlan);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> QdmStatus {
    match e {
        Error::Domain(_) => QdmStatus::Domain,
        Error::OutOfRange { .. } => QdmStatus::OutOfRange,
        Error::Extraction(_) => QdmStatus::Extraction,
        Error::Underdetermined(_) => QdmStatus::Underdetermined,
        Error::Index(_) => QdmStatus::Index,
        Error::Config { .. } => QdmStatus::Config,
        Error::Usage(_) => QdmStatus::Usage,
        Error::Io { .. } => QdmStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, mapping errors and panics to a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            QdmStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(name))) => {
            set_last_error(&format!("null pointer passed for `{name}`"));
            QdmStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_last_error("input is not valid UTF-8");
            QdmStatus::InvalidUtf8
        }
        Err(_) => {
            set_last_error("internal panic");
            QdmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: caller guarantees `p` is null or valid for reads.
    unsafe { p.as_ref() }.ok_or(Fail::Null(name))
}

unsafe fn write_out<T>(p: *mut T, name: &'static str, value: T) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    // SAFETY: non-null and, per the caller contract, valid for writes.
    unsafe { p.write(value) };
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, n: usize, name: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    // SAFETY: non-null and, per the caller contract, valid for `n` reads.
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

unsafe fn c_text<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    // SAFETY: non-null and, per the caller contract, NUL-terminated.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Fail::Utf8)
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the last failing call on this thread; empty after success.
/// Valid until the next call into this library on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn qdm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn qdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by `CString::into_raw` in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// The recurrent-readout prefactor 2 / (1 + e^-1).
#[unsafe(no_mangle)]
pub extern "C" fn qdm_recurrent_prefactor() -> f64 {
    recurrent_prefactor()
}

/// Sensitivity of one protocol in units of sqrt(us) per unit SNR.
///
/// # Safety
/// `params` must be valid for reads and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_eta(params: *const QdmProtocolParams, protocol: QdmProtocol, out: *mut f64) -> QdmStatus {
    guard(|| {
        let p: ProtocolParams = (*unsafe { deref(params, "params") }?).into();
        let eta = match protocol {
            QdmProtocol::Lcqdm => eta_lcqdm(&p)?,
            QdmProtocol::Leibold => eta_leibold(&p)?,
            QdmProtocol::Conventional => eta_conventional(&p)?,
        };
        unsafe { write_out(out, "out", eta) }
    })
}

/// All three sensitivities and their ratios.
///
/// # Safety
/// `params` must be valid for reads and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_evaluate(params: *const QdmProtocolParams, out: *mut QdmSensitivity) -> QdmStatus {
    guard(|| {
        let p: ProtocolParams = (*unsafe { deref(params, "params") }?).into();
        let r = SensitivityResult::evaluate(&p)?;
        let s = QdmSensitivity {
            eta_lcqdm: r.eta_lcqdm,
            eta_leibold: r.eta_leibold,
            eta_conventional: r.eta_conventional,
            ratio_leibold_over_lc: r.ratio_leibold_over_lc,
            ratio_conv_over_lc: r.ratio_conv_over_lc,
        };
        unsafe { write_out(out, "out", s) }
    })
}

/// Readouts sharing one MW block.
///
/// # Safety
/// `params` must be valid for reads and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_readouts_per_cycle(
    params: *const QdmProtocolParams,
    protocol: QdmProtocol,
    out: *mut usize,
) -> QdmStatus {
    guard(|| {
        let p: ProtocolParams = (*unsafe { deref(params, "params") }?).into();
        let n = readouts_per_cycle(&p, protocol.into())?;
        unsafe { write_out(out, "out", n) }
    })
}

/// The built-in synthetic photophysics model.
#[unsafe(no_mangle)]
pub extern "C" fn qdm_model_new_default() -> *mut QdmModel {
    Box::into_raw(Box::new(QdmModel(PhotophysicsModel::default())))
}

/// Model from explicit coefficients; validated before return.
///
/// # Safety
/// `out` must be valid for writes.
#[unsafe(no_mangle)]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn qdm_model_new(
    init_a: f64,
    init_b: f64,
    init_c: f64,
    ro_a: f64,
    ro_b: f64,
    ro_c: f64,
    i_sat: f64,
    r_max: f64,
    c0: f64,
    i_min: f64,
    i_max: f64,
    out: *mut *mut QdmModel,
) -> QdmStatus {
    guard(|| {
        let model = PhotophysicsModel {
            init_curve: LogQuadraticCurve::new(init_a, init_b, init_c),
            readout_curve: LogQuadraticCurve::new(ro_a, ro_b, ro_c),
            i_sat,
            r_max,
            c0,
            validity: (i_min, i_max),
        };
        model.validate()?;
        unsafe { write_out(out, "out", Box::into_raw(Box::new(QdmModel(model)))) }
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_model_free(model: *mut QdmModel) {
    if !model.is_null() {
        // SAFETY: produced by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Initialization time (us) at `intensity` (mW/um2).
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_model_init_time(model: *const QdmModel, intensity: f64, out: *mut f64) -> QdmStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let t = m.0.init_time(Intensity::new(intensity)?)?;
        unsafe { write_out(out, "out", t) }
    })
}

/// Readout time (us) at `intensity` (mW/um2).
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_model_readout_time(model: *const QdmModel, intensity: f64, out: *mut f64) -> QdmStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let t = m.0.readout_time(Intensity::new(intensity)?)?;
        unsafe { write_out(out, "out", t) }
    })
}

/// Parses configuration text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_config_parse(text: *const c_char, out: *mut *mut QdmConfig) -> QdmStatus {
    guard(|| {
        let cfg = parse_config(unsafe { c_text(text, "text") }?)?;
        unsafe { write_out(out, "out", Box::into_raw(Box::new(QdmConfig(cfg)))) }
    })
}

/// # Safety
/// `config` must be null or a handle from this library, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_config_free(config: *mut QdmConfig) {
    if !config.is_null() {
        // SAFETY: produced by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Protocol timings at the configured operating point.
///
/// # Safety
/// `config` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_config_protocol_params(
    config: *const QdmConfig,
    out: *mut QdmProtocolParams,
) -> QdmStatus {
    guard(|| {
        let c = unsafe { deref(config, "config") }?;
        let p = c.0.protocol_params()?;
        unsafe { write_out(out, "out", p.into()) }
    })
}

/// Canonical text form of the configuration; free with [`qdm_string_free`].
///
/// # Safety
/// `config` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_config_to_text(config: *const QdmConfig, out: *mut *mut c_char) -> QdmStatus {
    guard(|| {
        let c = unsafe { deref(config, "config") }?;
        unsafe { write_out(out, "out", into_c_string(c.0.to_text())) }
    })
}

/// Copy of the configured photophysics model.
///
/// # Safety
/// `config` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_config_model(config: *const QdmConfig, out: *mut *mut QdmModel) -> QdmStatus {
    guard(|| {
        let c = unsafe { deref(config, "config") }?;
        unsafe { write_out(out, "out", Box::into_raw(Box::new(QdmModel(c.0.model)))) }
    })
}

/// Plans a raster acquisition of an `nx` x `ny` x `nz` grid.
///
/// `t_z_step` < 0 selects the default (the in-plane dead time).
///
/// # Safety
/// `params` must be valid for reads and `out` valid for writes.
#[unsafe(no_mangle)]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn qdm_plan_new(
    nx: usize,
    ny: usize,
    nz: usize,
    pitch_xy: f64,
    pitch_z: f64,
    params: *const QdmProtocolParams,
    protocol: QdmProtocol,
    t_z_step: f64,
    out: *mut *mut QdmPlan,
) -> QdmStatus {
    guard(|| {
        let p: ProtocolParams = (*unsafe { deref(params, "params") }?).into();
        let grid = VoxelGrid::new(nx, ny, nz, [pitch_xy, pitch_xy, pitch_z])?;
        let settings = PlanSettings { t_z_step: (t_z_step >= 0.0).then_some(t_z_step), aom: None };
        let plan = plan_acquisition(&grid, &p, protocol.into(), &settings)?;
        unsafe { write_out(out, "out", Box::into_raw(Box::new(QdmPlan(plan)))) }
    })
}

/// # Safety
/// `plan` must be null or a handle from this library, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_plan_free(plan: *mut QdmPlan) {
    if !plan.is_null() {
        // SAFETY: produced by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(plan) });
    }
}

/// Total acquisition time in microseconds.
///
/// # Safety
/// `plan` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_plan_total_time(plan: *const QdmPlan, out: *mut f64) -> QdmStatus {
    guard(|| {
        let p = unsafe { deref(plan, "plan") }?;
        unsafe { write_out(out, "out", p.0.total_time) }
    })
}

/// # Safety
/// `plan` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_plan_cycle_count(plan: *const QdmPlan, out: *mut usize) -> QdmStatus {
    guard(|| {
        let p = unsafe { deref(plan, "plan") }?;
        unsafe { write_out(out, "out", p.0.cycles.len()) }
    })
}

/// Cycle schedule as CSV; free with [`qdm_string_free`].
///
/// # Safety
/// `plan` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_plan_cycles_csv(plan: *const QdmPlan, out: *mut *mut c_char) -> QdmStatus {
    guard(|| {
        let p = unsafe { deref(plan, "plan") }?;
        unsafe { write_out(out, "out", into_c_string(p.0.cycles_csv())) }
    })
}

/// Monte Carlo sensitivity estimate with Poisson counting.
///
/// # Safety
/// `params` and `model` must be valid for reads; `eta` and `stderr_out`
/// valid for writes.
#[unsafe(no_mangle)]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn qdm_simulate(
    params: *const QdmProtocolParams,
    model: *const QdmModel,
    i_conf: f64,
    n_trials: usize,
    seed: u64,
    protocol: QdmProtocol,
    eta: *mut f64,
    stderr_out: *mut f64,
) -> QdmStatus {
    guard(|| {
        let p: ProtocolParams = (*unsafe { deref(params, "params") }?).into();
        let m = unsafe { deref(model, "model") }?;
        let cfg = SimConfig {
            params: p,
            model: m.0,
            i_conf: Intensity::new(i_conf)?,
            n_trials,
            master_seed: seed,
            counting: Counting::Poisson,
        };
        let outcome = simulate_protocol(&cfg, protocol.into())?;
        unsafe { write_out(eta, "eta", outcome.eta_empirical) }?;
        unsafe { write_out(stderr_out, "stderr_out", outcome.eta_stderr) }
    })
}

/// Extracts readout and initialization times (us) from a trace of `n`
/// samples; contrast is window-averaged.
///
/// # Safety
/// The three arrays must hold `n` readable values; `t_ro` and `t_init`
/// must be valid for writes.
#[unsafe(no_mangle)]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn qdm_extract_times(
    t_sweep: *const f64,
    sig_pl: *const f64,
    ref_pl: *const f64,
    n: usize,
    intensity: f64,
    t_ro: *mut f64,
    t_init: *mut f64,
) -> QdmStatus {
    guard(|| {
        let t = unsafe { slice(t_sweep, n, "t_sweep") }?;
        let s = unsafe { slice(sig_pl, n, "sig_pl") }?;
        let r = unsafe { slice(ref_pl, n, "ref_pl") }?;
        let samples = (0..n).map(|k| TraceSample { t_sweep: t[k], sig_pl: s[k], ref_pl: r[k] }).collect();
        let trace = CalibrationTrace::new(Intensity::new(intensity)?, samples)?;
        let x = extract_times(&trace, ContrastMode::WindowAverage)?;
        unsafe { write_out(t_ro, "t_ro", x.t_ro) }?;
        unsafe { write_out(t_init, "t_init", x.t_init) }
    })
}

/// Least-squares log-quadratic fit of `n` (intensity, duration) points.
/// Writes `a`, `b`, `c` to `coeffs[0..3]`.
///
/// # Safety
/// Both arrays must hold `n` readable values; `coeffs` must be valid for
/// three writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qdm_fit_log_quadratic(
    intensity: *const f64,
    duration: *const f64,
    n: usize,
    coeffs: *mut f64,
) -> QdmStatus {
    guard(|| {
        let i = unsafe { slice(intensity, n, "intensity") }?;
        let t = unsafe { slice(duration, n, "duration") }?;
        let points =
            i.iter().zip(t).map(|(&i, &t)| Intensity::new(i).map(|i| (i, t))).collect::<qdmsim::Result<Vec<_>>>()?;
        let curve = fit_log_quadratic(&points)?;
        if coeffs.is_null() {
            return Err(Fail::Null("coeffs"));
        }
        // SAFETY: non-null and, per the caller contract, valid for 3 writes.
        unsafe {
            coeffs.write(curve.a);
            coeffs.add(1).write(curve.b);
            coeffs.add(2).write(curve.c);
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn status_codes_are_stable() {
        assert_eq!(QdmStatus::Ok as i32, 0);
        assert_eq!(QdmStatus::Io as i32, 8);
        assert_eq!(QdmStatus::Panic as i32, 11);
    }

    #[test]
    fn last_error_cleared_on_success() {
        let st = unsafe { qdm_eta(ptr::null(), QdmProtocol::Lcqdm, ptr::null_mut()) };
        assert_eq!(st, QdmStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(qdm_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("params"));
        let p =
            QdmProtocolParams { t_init_ls: 20.0, t_init_conf: 20.0, t_ro_conf: 5.0, t_mw: 100.0, t_d: 0.1, t1: 5000.0 };
        let mut eta = 0.0;
        assert_eq!(unsafe { qdm_eta(&p, QdmProtocol::Lcqdm, &mut eta) }, QdmStatus::Ok);
        let msg = unsafe { CStr::from_ptr(qdm_last_error_message()) };
        assert!(msg.to_bytes().is_empty());
    }
}
