//! C interface to `rainfuse`.
//!
//! Every function returns an [`RfStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and can be read with
//! [`rf_last_error`]. Handles are opaque and must be released with their
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rainfuse::app::{cmd_fit, cmd_predict, cmd_simulate, cmd_validate};
use rainfuse::car::{car_logdensity, CarSpec};
use rainfuse::config::RunConfig;
use rainfuse::mcmc::{trace_summary, PosteriorSamples};
use rainfuse::products::Dic;
use rainfuse::{Error, Grid};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    Ingest = 5,
    Io = 6,
    Numerical = 7,
    Panic = 8,
}

/// A loaded run configuration.
pub struct RfConfig {
    inner: RunConfig,
}

/// Posterior draws from a fit.
pub struct RfSamples {
    inner: PosteriorSamples,
}

/// Summary of one scalar parameter.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RfSummary {
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: f64,
}

/// DIC and its parts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RfDic {
    pub dic: f64,
    pub d_bar: f64,
    pub p_d: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RfStatus {
    match e {
        Error::Config(_) => RfStatus::Config,
        Error::Domain(_) => RfStatus::Domain,
        Error::Ingest { .. } | Error::Csv(_) => RfStatus::Ingest,
        Error::Io(_) => RfStatus::Io,
        Error::Factorization(_) | Error::NonFinite(_) | Error::Numerical(_) => RfStatus::Numerical,
    }
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (RfStatus, String)>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RfStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RfStatus::Panic
        }
    }
}

fn lib<T>(r: rainfuse::Result<T>) -> Result<T, (RfStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (RfStatus, String) {
    (RfStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (RfStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (RfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message of the previous call on this thread if it failed, else null.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a TOML run configuration from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_config_load(path: *const c_char, out: *mut *mut RfConfig) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = read_str(path, "path")?;
        let inner = lib(RunConfig::load(Path::new(p)))?;
        *out = Box::into_raw(Box::new(RfConfig { inner }));
        Ok(())
    })
}

/// Parse a configuration from TOML text. Relative paths are taken as is.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_config_parse(text: *const c_char, out: *mut *mut RfConfig) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = read_str(text, "text")?;
        let inner = lib(RunConfig::from_toml(t))?;
        *out = Box::into_raw(Box::new(RfConfig { inner }));
        Ok(())
    })
}

/// Override every seed of the configuration.
///
/// # Safety
/// `cfg` must come from `rf_config_load` or `rf_config_parse`.
#[no_mangle]
pub unsafe extern "C" fn rf_config_set_seed(cfg: *mut RfConfig, seed: u64) -> RfStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        c.inner.apply_overrides(Some(seed), None);
        Ok(())
    })
}

/// Switch to a model preset (`model1` .. `model5`).
///
/// # Safety
/// `cfg` must be a live handle; `preset` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rf_config_set_preset(cfg: *mut RfConfig, preset: *const c_char) -> RfStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let p = read_str(preset, "preset")?;
        let mut next = c.inner.clone();
        next.apply_overrides(None, Some(p));
        lib(next.model_config())?;
        c.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rf_config_free(cfg: *mut RfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Write a synthetic dataset as configured.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_simulate(cfg: *const RfConfig) -> RfStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        lib(cmd_simulate(&c.inner)).map(drop)
    })
}

/// Fit the configured data and write trace and report files. When `out`
/// is not null it receives a handle to the draws.
///
/// # Safety
/// `cfg` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rf_fit(cfg: *const RfConfig, out: *mut *mut RfSamples) -> RfStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let fit = lib(cmd_fit(&c.inner))?;
        if !out.is_null() {
            *out = Box::into_raw(Box::new(RfSamples { inner: fit.samples }));
        }
        Ok(())
    })
}

/// Write rain maps, probability maps and DIC from the fitted trace.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_predict(cfg: *const RfConfig) -> RfStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        lib(cmd_predict(&c.inner)).map(drop)
    })
}

/// Pool hold-out coverage. Either out-pointer may be null; a stream with no
/// records yields NaN.
///
/// # Safety
/// `cfg` must be a live handle; out-pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn rf_validate(cfg: *const RfConfig, gage: *mut f64, radar: *mut f64) -> RfStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let report = lib(cmd_validate(&c.inner))?;
        let get = |k: &str| report.pooled.get(k).and_then(|t| t.fraction()).unwrap_or(f64::NAN);
        if !gage.is_null() {
            *gage = get("gage");
        }
        if !radar.is_null() {
            *radar = get("radar");
        }
        Ok(())
    })
}

/// Number of kept draws.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_samples_len(s: *const RfSamples) -> usize {
    s.as_ref().map_or(0, |s| s.inner.len())
}

/// Median, central 95% interval and effective sample size of a scalar such
/// as `c2`, `alpha` or `y[0,12]`.
///
/// # Safety
/// `s` must be a live handle, `name` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_samples_summary(s: *const RfSamples, name: *const c_char, out: *mut RfSummary) -> RfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("samples"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let n = read_str(name, "name")?;
        let t = lib(trace_summary(&s.inner, n))?;
        *out = RfSummary {
            median: t.median,
            q025: t.q025,
            q975: t.q975,
            ess: t.ess,
        };
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rf_samples_free(s: *mut RfSamples) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// DIC from the mean deviance and the deviance at the posterior mean.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dic_from_parts(d_bar: f64, d_at_mean: f64, out: *mut RfDic) -> RfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = Dic::from_parts(d_bar, d_at_mean);
        *out = RfDic {
            dic: d.dic,
            d_bar: d.d_bar,
            p_d: d.p_d,
        };
        Ok(())
    })
}

/// Log-density of a CAR field on an `nx` by `ny` rook lattice with
/// precision `tau2 (D - rho W)`. `y` and `mean` hold `nx * ny` values,
/// x fastest.
///
/// # Safety
/// `y` and `mean` must point to `nx * ny` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_car_logdensity(
    nx: usize,
    ny: usize,
    rho: f64,
    tau2: f64,
    y: *const f64,
    mean: *const f64,
    out: *mut f64,
) -> RfStatus {
    guard(|| {
        if y.is_null() || mean.is_null() {
            return Err(null("y or mean"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let grid = lib(Grid::unit(nx, ny))?;
        let n = grid.len();
        let y = std::slice::from_raw_parts(y, n);
        let mean = std::slice::from_raw_parts(mean, n);
        let spec = lib(CarSpec::new(rho, tau2))?;
        *out = lib(car_logdensity(&grid, y, mean, spec))?;
        Ok(())
    })
}
