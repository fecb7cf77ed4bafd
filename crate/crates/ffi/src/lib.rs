//! C ABI for the `tfqkd` key-rate library.
//!
//! Parameters and results live behind opaque handles created and destroyed
//! by this library. Every fallible call returns a [`TfqkdStatus`]; on failure
//! a description is kept per thread and can be read with
//! [`tfqkd_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tfqkd::config::RunConfig;
use tfqkd::dominance::verify_dominance;
use tfqkd::keyrate::{self, KeyRateResult};
use tfqkd::stats::{self, EpsilonBudget};
use tfqkd::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfqkdStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad parameter value, unknown key or malformed JSON.
    InvalidArgument = 2,
    /// Counts inconsistent with the yield model.
    Infeasible = 3,
    /// Dominance coefficients unavailable or verification failed.
    Dominance = 4,
    Internal = 5,
}

/// Run configuration: protocol, channel and budget.
pub struct TfqkdParams {
    config: RunConfig,
}

/// Outcome of a key-rate evaluation.
pub struct TfqkdResult {
    inner: KeyRateResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> TfqkdStatus {
    match e {
        Error::Infeasible(_) => TfqkdStatus::Infeasible,
        Error::InvalidCoefficients => TfqkdStatus::Dominance,
        Error::SearchFailure(_) | Error::Divergence { .. } => TfqkdStatus::Internal,
        _ => TfqkdStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), TfqkdStatus>) -> TfqkdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TfqkdStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            TfqkdStatus::Internal
        }
    }
}

fn fail(e: Error) -> TfqkdStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> TfqkdStatus {
    set_error(format!("{what} is null"));
    TfqkdStatus::NullPointer
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, TfqkdStatus> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        TfqkdStatus::InvalidArgument
    })
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tfqkd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// New handle holding the default configuration. Free with
/// [`tfqkd_params_free`].
#[no_mangle]
pub extern "C" fn tfqkd_params_new() -> *mut TfqkdParams {
    Box::into_raw(Box::new(TfqkdParams { config: RunConfig::default() }))
}

/// Parses a flat JSON config (same keys as the command-line tool) into a new
/// handle stored in `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_params_from_json(json: *const c_char, out: *mut *mut TfqkdParams) -> TfqkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(json, "json")?;
        let config = RunConfig::from_json(text).map_err(fail)?;
        config.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(TfqkdParams { config }));
        Ok(())
    })
}

/// # Safety
/// `params` must come from this library and not be freed twice. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_params_free(params: *mut TfqkdParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Sets one numeric config key, e.g. `"mu1"` or `"distance_km"`. For
/// `"n_tot"` an infinite value selects the asymptotic limit. The handle is
/// left unchanged on failure.
///
/// # Safety
/// `params` must be a live handle and `key` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_params_set(params: *mut TfqkdParams, key: *const c_char, value: f64) -> TfqkdStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| null("params"))?;
        let key = read_str(key, "key")?;
        let mut v = serde_json::to_value(&p.config).map_err(|e| fail(Error::Input(e.to_string())))?;
        let obj = v.as_object_mut().expect("config is an object");
        if !obj.contains_key(key) {
            return Err(fail(Error::Config(format!("unknown key {key:?}"))));
        }
        let new = if key == "n_tot" && value.is_infinite() && value > 0.0 {
            serde_json::Value::from("inf")
        } else if let Some(n) = serde_json::Number::from_f64(value) {
            if obj[key].is_u64() && value.fract() == 0.0 && value >= 0.0 {
                serde_json::Value::from(value as u64)
            } else {
                serde_json::Value::Number(n)
            }
        } else {
            return Err(fail(Error::Config(format!("{key} = {value} is not finite"))));
        };
        obj.insert(key.to_owned(), new);
        let config: RunConfig = serde_json::from_value(v).map_err(|e| fail(Error::Config(e.to_string())))?;
        p.config = config;
        Ok(())
    })
}

/// Reads one numeric config key into `*out`. An asymptotic `n_tot` reads as
/// +infinity.
///
/// # Safety
/// `params` must be a live handle, `key` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_params_get(params: *const TfqkdParams, key: *const c_char, out: *mut f64) -> TfqkdStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let key = read_str(key, "key")?;
        let v = serde_json::to_value(&p.config).map_err(|e| fail(Error::Input(e.to_string())))?;
        let x = match v.get(key) {
            Some(serde_json::Value::String(s)) if s == "inf" => f64::INFINITY,
            Some(serde_json::Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
            Some(serde_json::Value::Bool(b)) => f64::from(u8::from(*b)),
            _ => return Err(fail(Error::Config(format!("no numeric key {key:?}")))),
        };
        *out = x;
        Ok(())
    })
}

/// Checks every field of the handle.
///
/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_params_validate(params: *const TfqkdParams) -> TfqkdStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        p.config.validate().map_err(fail)
    })
}

/// Key rate at the expected counts of the configured run (asymptotic when
/// `n_tot` is infinite). The new result handle is stored in `*out`.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_rate(params: *const TfqkdParams, out: *mut *mut TfqkdResult) -> TfqkdStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = &p.config;
        c.validate().map_err(fail)?;
        let r = keyrate::expected_rate(&c.protocol(), &c.channel(), c.n_tot.as_option()).map_err(fail)?;
        *out = Box::into_raw(Box::new(TfqkdResult { inner: r }));
        Ok(())
    })
}

/// # Safety
/// `result` must come from [`tfqkd_rate`] and not be freed twice. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_result_free(result: *mut TfqkdResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Secret bits per round; NaN for a NULL handle.
///
/// # Safety
/// `result` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_result_rate_per_pulse(result: *const TfqkdResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.rate_per_pulse)
}

/// Final key length in bits (per round in the asymptotic case).
///
/// # Safety
/// `result` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_result_key_length(result: *const TfqkdResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.key_length_g)
}

/// Upper bound on the phase error rate.
///
/// # Safety
/// `result` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_result_phase_error(result: *const TfqkdResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.phase_error_bound)
}

/// Composed security parameter of the run.
///
/// # Safety
/// `result` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_result_eps_sec(result: *const TfqkdResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.diagnostics.eps_sec)
}

/// Result as a JSON object; free the string with [`tfqkd_string_free`].
///
/// # Safety
/// `result` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_result_to_json(result: *const TfqkdResult) -> *mut c_char {
    result
        .as_ref()
        .and_then(|r| serde_json::to_string(&r.inner).ok())
        .and_then(|s| CString::new(s).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `s` must come from this library and not be freed twice. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Numerically checks the dominance inequality at the configured point
/// (including any Lambda/Gamma overrides) on the truncated space of
/// `cutoff`. `*pass` receives the verdict; a failed check is still
/// [`TfqkdStatus::Ok`].
///
/// # Safety
/// `params` must be a live handle and `pass` writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_verify_dominance(params: *const TfqkdParams, cutoff: u32, pass: *mut bool) -> TfqkdStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if pass.is_null() {
            return Err(null("pass"));
        }
        let c = &p.config;
        let coeffs = c.dominance_coefficients().map_err(fail)?;
        let report = verify_dominance(&c.protocol().dominance_params(), &coeffs, cutoff).map_err(fail)?;
        *pass = report.pass;
        Ok(())
    })
}

/// Composed security parameter for a failure-probability budget.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tfqkd_compose_security(
    epsilon: f64,
    zeta_bits: u32,
    zeta_prime_bits: u32,
    epsilon_err: f64,
    out: *mut f64,
) -> TfqkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let budget = EpsilonBudget { epsilon, zeta_bits, zeta_prime_bits, epsilon_err };
        budget.validate().map_err(fail)?;
        *out = stats::compose_security(&budget);
        Ok(())
    })
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn tfqkd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
