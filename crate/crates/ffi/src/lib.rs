//! C ABI for `conformal-fdp`.
//!
//! Conventions:
//! - every function returns a [`CfdpStatus`]; results come back through
//!   out-pointers;
//! - envelopes and families are opaque handles released with their `_free`
//!   function;
//! - on failure, [`cfdp_last_error`] returns a message for the calling thread;
//! - panics are caught at the boundary and reported as
//!   [`CfdpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use conformal_fdp::diagnostics::{bh_threshold, ecdf_variance, VarianceQuery};
use conformal_fdp::envelope::{calibrate_envelope, calibrate_family, Direction, EnvelopeFamily, EnvelopeFunction};
use conformal_fdp::fdp::{estimate_m0, fdp_combined, PValueVector};
use conformal_fdp::io::{envelope_from_json, envelope_to_json, EnvelopeDocument};
use conformal_fdp::sampler::{sample_conformal, SamplerConfig, SamplerMode};
use conformal_fdp::statistics::SummaryStatisticSpec;
use conformal_fdp::Error;

/// Status codes. Nonzero values match the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfdpStatus {
    Ok = 0,
    ConfigError = 2,
    InputError = 3,
    NumericError = 4,
    NullPointer = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfdpStatisticKind {
    Ks = 0,
    Hc = 1,
    Thc = 2,
    Bj = 3,
    Pointwise = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfdpDirection {
    Upper = 0,
    Lower = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfdpSamplerMode {
    Conformal = 0,
    Iid = 1,
}

/// Summary statistic parameters. `ell`, `r` and `beta` are used by HC/THC,
/// `t0` and `beta` by the pointwise statistic.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CfdpStatisticSpec {
    pub kind: CfdpStatisticKind,
    pub ell: f64,
    pub r: f64,
    pub beta: f64,
    pub t0: f64,
    pub bj_one_sided: bool,
}

/// Opaque envelope handle.
pub struct CfdpEnvelope {
    inner: EnvelopeFunction,
}

/// Opaque envelope-family handle.
pub struct CfdpFamily {
    inner: EnvelopeFamily,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard<F: FnOnce() -> FfiResult<()>>(f: F) -> CfdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfdpStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            CfdpStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            let status = match e.exit_code() {
                2 => CfdpStatus::ConfigError,
                4 => CfdpStatus::NumericError,
                _ => CfdpStatus::InputError,
            };
            set_error(e.to_string());
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CfdpStatus::Panic
        }
    }
}

fn nonnull<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    // SAFETY: the caller guarantees `p` is null or valid for reads.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn out<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    // SAFETY: the caller guarantees `p` is null or valid for writes.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

fn input_slice<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

fn output_slice<'a>(p: *mut f64, len: usize, what: &'static str) -> FfiResult<&'a mut [f64]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `len` writable doubles at `p`.
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

impl CfdpStatisticSpec {
    fn to_spec(self) -> SummaryStatisticSpec {
        let mut spec = match self.kind {
            CfdpStatisticKind::Ks => SummaryStatisticSpec::ks(),
            CfdpStatisticKind::Hc => SummaryStatisticSpec::hc(self.beta),
            CfdpStatisticKind::Thc => SummaryStatisticSpec::thc(self.ell, self.r, self.beta),
            CfdpStatisticKind::Bj => SummaryStatisticSpec::bj(),
            CfdpStatisticKind::Pointwise => SummaryStatisticSpec::pointwise(self.t0, self.beta),
        };
        spec.bj_one_sided = self.bj_one_sided;
        spec
    }
}

/// Default truncated higher-criticism parameters (`ell = 0.01`, `r = 0.99`,
/// `beta = 0.5`).
#[no_mangle]
pub extern "C" fn cfdp_statistic_thc_default() -> CfdpStatisticSpec {
    CfdpStatisticSpec {
        kind: CfdpStatisticKind::Thc,
        ell: 0.01,
        r: 0.99,
        beta: 0.5,
        t0: 0.5,
        bj_one_sided: false,
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cfdp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Calibrate an envelope for `P(n, m)` (or for `m` i.i.d. uniforms) from `b`
/// Monte Carlo draws at level `1 - delta`.
///
/// # Safety
/// `out_envelope` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfdp_envelope_calibrate(
    n: usize,
    m: usize,
    b: usize,
    delta: f64,
    spec: CfdpStatisticSpec,
    direction: CfdpDirection,
    mode: CfdpSamplerMode,
    seed: u64,
    out_envelope: *mut *mut CfdpEnvelope,
) -> CfdpStatus {
    guard(|| {
        let slot = out(out_envelope, "out_envelope")?;
        let mode = match mode {
            CfdpSamplerMode::Conformal => SamplerMode::Conformal,
            CfdpSamplerMode::Iid => SamplerMode::IidUniform,
        };
        let direction = match direction {
            CfdpDirection::Upper => Direction::Upper,
            CfdpDirection::Lower => Direction::Lower,
        };
        let cfg = SamplerConfig { n, m, b, seed, mode };
        let inner = calibrate_envelope(&cfg, &spec.to_spec(), delta, direction)?;
        *slot = Box::into_raw(Box::new(CfdpEnvelope { inner }));
        Ok(())
    })
}

/// Parse an envelope from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out_envelope` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfdp_envelope_from_json(
    json: *const c_char,
    out_envelope: *mut *mut CfdpEnvelope,
) -> CfdpStatus {
    guard(|| {
        let slot = out(out_envelope, "out_envelope")?;
        if json.is_null() {
            return Err(Failure::Null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Error::Input("envelope JSON is not UTF-8".into()))?;
        let inner = envelope_from_json(text)?.to_envelope()?;
        *slot = Box::into_raw(Box::new(CfdpEnvelope { inner }));
        Ok(())
    })
}

/// Serialize an envelope to JSON. Release the string with
/// [`cfdp_string_free`].
///
/// # Safety
/// `envelope` must be a live handle; `out_json` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfdp_envelope_to_json(
    envelope: *const CfdpEnvelope,
    out_json: *mut *mut c_char,
) -> CfdpStatus {
    guard(|| {
        let env = nonnull(envelope, "envelope")?;
        let slot = out(out_json, "out_json")?;
        let text = envelope_to_json(&EnvelopeDocument::from_envelope(&env.inner))?;
        *slot = CString::new(text).map_err(|e| Error::Input(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `envelope` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfdp_envelope_cutoff(envelope: *const CfdpEnvelope, out_cutoff: *mut f64) -> CfdpStatus {
    guard(|| {
        *out(out_cutoff, "out_cutoff")? = nonnull(envelope, "envelope")?.inner.cutoff();
        Ok(())
    })
}

/// Evaluate the envelope at `len` points. With `monotone` set, evaluates the
/// running maximum instead.
///
/// # Safety
/// `t` and `out_values` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cfdp_envelope_eval(
    envelope: *const CfdpEnvelope,
    t: *const f64,
    len: usize,
    monotone: bool,
    out_values: *mut f64,
) -> CfdpStatus {
    guard(|| {
        let env = &nonnull(envelope, "envelope")?.inner;
        let ts = input_slice(t, len, "t")?;
        let dst = output_slice(out_values, len, "out_values")?;
        for (d, &x) in dst.iter_mut().zip(ts) {
            *d = if monotone { env.monotone_eval(x) } else { env.eval(x) };
        }
        Ok(())
    })
}

/// # Safety
/// `envelope` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cfdp_envelope_free(envelope: *mut CfdpEnvelope) {
    if !envelope.is_null() {
        drop(Box::from_raw(envelope));
    }
}

/// Calibrate count-scale envelopes `G_1..G_m` on shared conformal draws.
///
/// # Safety
/// `out_family` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfdp_family_calibrate(
    n: usize,
    m: usize,
    b: usize,
    delta: f64,
    spec: CfdpStatisticSpec,
    seed: u64,
    out_family: *mut *mut CfdpFamily,
) -> CfdpStatus {
    guard(|| {
        let slot = out(out_family, "out_family")?;
        let samples = sample_conformal(&SamplerConfig::conformal(n, m, b, seed))?;
        let inner = calibrate_family(&samples, &spec.to_spec(), delta)?;
        *slot = Box::into_raw(Box::new(CfdpFamily { inner }));
        Ok(())
    })
}

/// # Safety
/// `family` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfdp_family_size(family: *const CfdpFamily, out_m: *mut usize) -> CfdpStatus {
    guard(|| {
        *out(out_m, "out_m")? = nonnull(family, "family")?.inner.m();
        Ok(())
    })
}

/// # Safety
/// `family` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cfdp_family_free(family: *mut CfdpFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Upper bound `m0_hat` on the number of null p-values.
///
/// # Safety
/// `p` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cfdp_estimate_m0(
    family: *const CfdpFamily,
    p: *const f64,
    len: usize,
    out_m0: *mut usize,
) -> CfdpStatus {
    guard(|| {
        let fam = &nonnull(family, "family")?.inner;
        let pv = PValueVector::new(input_slice(p, len, "p")?.to_vec())?;
        *out(out_m0, "out_m0")? = estimate_m0(&pv, fam)?;
        Ok(())
    })
}

/// Naive, refined and combined FDP bounds at `grid_len` thresholds. `n` is the
/// calibration size the p-values were built with (0 skips the check).
/// `out_m0` may be null.
///
/// # Safety
/// `p` must hold `len` doubles; `grid` and the three outputs `grid_len`.
#[no_mangle]
pub unsafe extern "C" fn cfdp_fdp_bounds(
    family: *const CfdpFamily,
    p: *const f64,
    len: usize,
    n: usize,
    grid: *const f64,
    grid_len: usize,
    out_naive: *mut f64,
    out_refined: *mut f64,
    out_combined: *mut f64,
    out_m0: *mut usize,
) -> CfdpStatus {
    guard(|| {
        let fam = &nonnull(family, "family")?.inner;
        let mut pv = PValueVector::new(input_slice(p, len, "p")?.to_vec())?;
        if n > 0 {
            pv = pv.with_calibration_size(n);
        }
        let grid = input_slice(grid, grid_len, "grid")?;
        let curve = fdp_combined(&pv, fam, grid)?;
        output_slice(out_naive, grid_len, "out_naive")?.copy_from_slice(&curve.bound_naive);
        output_slice(out_refined, grid_len, "out_refined")?.copy_from_slice(&curve.bound_refined);
        output_slice(out_combined, grid_len, "out_combined")?.copy_from_slice(&curve.bound_combined);
        if let Some(slot) = out_m0.as_mut() {
            *slot = curve.mhat0.unwrap_or(len);
        }
        Ok(())
    })
}

/// Exact variance of the conformal ECDF at `t`.
///
/// # Safety
/// `out_var` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfdp_ecdf_variance(n: usize, m: usize, t: f64, out_var: *mut f64) -> CfdpStatus {
    guard(|| {
        *out(out_var, "out_var")? = ecdf_variance(VarianceQuery::new(n, m, t))?.var;
        Ok(())
    })
}

/// Benjamini-Hochberg step-up threshold and rejection count.
///
/// # Safety
/// `p` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cfdp_bh_threshold(
    p: *const f64,
    len: usize,
    alpha: f64,
    out_threshold: *mut f64,
    out_rejections: *mut usize,
) -> CfdpStatus {
    guard(|| {
        let pv = PValueVector::new(input_slice(p, len, "p")?.to_vec())?;
        let r = bh_threshold(&pv, alpha)?;
        *out(out_threshold, "out_threshold")? = r.threshold;
        *out(out_rejections, "out_rejections")? = r.rejections;
        Ok(())
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cfdp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
