//! C ABI for the suitfilter library.
//!
//! Every fallible function returns an [`SfStatus`]; on failure a description
//! is kept per thread and can be read with [`sf_last_error_message`].
//! Estimators cross the boundary as opaque [`SfEstimator`] handles that the
//! caller releases with [`sf_estimator_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use suitfilter::pipeline::{decide, DecisionConfig};
use suitfilter::signals::signals_from_logits;
use suitfilter::stats::{benjamini_hochberg, welch_noninferiority, AlphaSchedule, ScheduleKind};
use suitfilter::{CorrectnessEstimator, Decision, Error, LogitRecord, SignalMatrix, NUM_SIGNALS};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DegenerateTest = 3,
    DegenerateFit = 4,
    Parse = 5,
    Io = 6,
    ScheduleExhausted = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfScheduleKind {
    ObrienFleming = 0,
    Pocock = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SfWelchResult {
    pub t: f64,
    pub df: f64,
    pub p_one_sided: f64,
    pub mean_test: f64,
    pub mean_user_adjusted: f64,
    pub var_test: f64,
    pub var_user: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SfDecision {
    /// 1 for SUITABLE, 0 for INCONCLUSIVE.
    pub suitable: i32,
    pub p_value: f64,
    pub t: f64,
    pub df: f64,
    pub m_prime: f64,
    pub mean_pc_test: f64,
    pub mean_pc_user: f64,
}

/// Opaque handle to a trained correctness estimator.
pub struct SfEstimator {
    inner: CorrectnessEstimator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SfStatus {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::UndefinedStatistic(_) => {
            SfStatus::InvalidInput
        }
        Error::DegenerateTest(_) => SfStatus::DegenerateTest,
        Error::DegenerateFit(_) => SfStatus::DegenerateFit,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => SfStatus::Parse,
        Error::Io(_) => SfStatus::Io,
        Error::ScheduleExhausted { .. } => SfStatus::ScheduleExhausted,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F>(f: F) -> SfStatus
where
    F: FnOnce() -> Result<(), SfFailure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(SfFailure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            SfStatus::NullPointer
        }
        Ok(Err(SfFailure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            SfStatus::Internal
        }
    }
}

enum SfFailure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for SfFailure {
    fn from(e: Error) -> Self {
        SfFailure::Lib(e)
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), SfFailure> {
    if p.is_null() {
        Err(SfFailure::Null(what))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], SfFailure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn output<'a, T>(
    p: *mut T,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [T], SfFailure> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, SfFailure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| SfFailure::Lib(Error::invalid(format!("{what} is not valid UTF-8"))))
}

fn records_from(logits: &[f64], n: usize, k: usize) -> Result<Vec<LogitRecord>, SfFailure> {
    let expected = n
        .checked_mul(k)
        .ok_or_else(|| Error::invalid("n * k overflows"))?;
    if logits.len() != expected {
        return Err(Error::invalid("logit buffer size mismatch").into());
    }
    Ok(logits
        .chunks_exact(k.max(1))
        .take(n)
        .enumerate()
        .map(|(i, z)| LogitRecord::new(i.to_string(), z.to_vec()))
        .collect())
}

/// Message describing the last failure on this thread, or null.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Computes the twelve signals of one logit vector into `out[0..12]`.
///
/// # Safety
/// `logits` must point to `k` doubles and `out` to 12 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_extract_signals(
    logits: *const f64,
    k: usize,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        let z = input(logits, k, "logits")?;
        let out = output(out, NUM_SIGNALS, "out")?;
        let v = signals_from_logits(z)?;
        out.copy_from_slice(&v.values);
        Ok(())
    })
}

/// Parses an estimator from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sf_estimator_from_json(
    json: *const c_char,
    out: *mut *mut SfEstimator,
) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = CorrectnessEstimator::from_json(c_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(SfEstimator { inner }));
        Ok(())
    })
}

/// Loads an estimator JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sf_estimator_load(
    path: *const c_char,
    out: *mut *mut SfEstimator,
) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = CorrectnessEstimator::load(c_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(SfEstimator { inner }));
        Ok(())
    })
}

/// Serializes an estimator; release the string with [`sf_string_free`].
///
/// # Safety
/// `estimator` must be a live handle and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sf_estimator_to_json(
    estimator: *const SfEstimator,
    out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        non_null(estimator, "estimator")?;
        non_null(out, "out")?;
        let text = (*estimator).inner.to_json()?;
        let c = CString::new(text).map_err(|_| Error::invalid("JSON contains NUL"))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `estimator` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_estimator_free(estimator: *mut SfEstimator) {
    if !estimator.is_null() {
        drop(Box::from_raw(estimator));
    }
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Correctness probabilities for `n` row-major logit vectors of width `k`.
///
/// # Safety
/// `logits` must hold `n * k` doubles and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn sf_estimator_predict(
    estimator: *const SfEstimator,
    logits: *const f64,
    n: usize,
    k: usize,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        non_null(estimator, "estimator")?;
        let z = input(logits, n.saturating_mul(k), "logits")?;
        let out = output(out, n, "out")?;
        let rows = z
            .chunks_exact(k.max(1))
            .take(n)
            .map(|row| signals_from_logits(row).map(|v| v.values))
            .collect::<Result<Vec<_>, _>>()?;
        let p = (*estimator).inner.predict(&SignalMatrix::new(rows));
        out.copy_from_slice(&p);
        Ok(())
    })
}

/// One-sided Welch non-inferiority test on correctness probabilities.
///
/// # Safety
/// The input pointers must hold `n_test` and `n_user` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_welch_noninferiority(
    pc_test: *const f64,
    n_test: usize,
    pc_user: *const f64,
    n_user: usize,
    margin: f64,
    out: *mut SfWelchResult,
) -> SfStatus {
    guard(|| {
        let a = input(pc_test, n_test, "pc_test")?;
        let b = input(pc_user, n_user, "pc_user")?;
        non_null(out, "out")?;
        let w = welch_noninferiority(a, b, margin)?;
        *out = SfWelchResult {
            t: w.t,
            df: w.df,
            p_one_sided: w.p_one_sided,
            mean_test: w.mean_test,
            mean_user_adjusted: w.mean_user_adjusted,
            var_test: w.var_test,
            var_user: w.var_user,
        };
        Ok(())
    })
}

/// Full suitability decision from raw logits of width `k`.
///
/// # Safety
/// `test_logits` must hold `n_test * k` doubles, `user_logits` `n_user * k`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_decide(
    estimator: *const SfEstimator,
    test_logits: *const f64,
    n_test: usize,
    user_logits: *const f64,
    n_user: usize,
    k: usize,
    margin: f64,
    alpha: f64,
    out: *mut SfDecision,
) -> SfStatus {
    guard(|| {
        non_null(estimator, "estimator")?;
        non_null(out, "out")?;
        let test = records_from(
            input(test_logits, n_test.saturating_mul(k), "test_logits")?,
            n_test,
            k,
        )?;
        let user = records_from(
            input(user_logits, n_user.saturating_mul(k), "user_logits")?,
            n_user,
            k,
        )?;
        let r = decide(
            &(*estimator).inner,
            &test,
            &user,
            &DecisionConfig::new(margin, alpha),
        )?;
        *out = SfDecision {
            suitable: i32::from(r.decision == Decision::Suitable),
            p_value: r.p_value,
            t: r.t,
            df: r.df,
            m_prime: r.m_prime,
            mean_pc_test: r.mean_pc_test,
            mean_pc_user: r.mean_pc_user,
        };
        Ok(())
    })
}

/// Student's t CDF.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn sf_t_cdf(t: f64, df: f64, out: *mut f64) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = suitfilter::stats::t_cdf(t, df)?;
        Ok(())
    })
}

/// Per-stage thresholds of an alpha-spending schedule into `out[0..n_stages]`.
///
/// # Safety
/// `out` must have room for `n_stages` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_alpha_schedule(
    kind: SfScheduleKind,
    n_stages: usize,
    alpha: f64,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        let out = output(out, n_stages, "out")?;
        let kind = match kind {
            SfScheduleKind::ObrienFleming => ScheduleKind::ObrienFleming,
            SfScheduleKind::Pocock => ScheduleKind::Pocock,
        };
        let schedule = AlphaSchedule::new(kind, n_stages, alpha)?;
        out.copy_from_slice(&schedule.thresholds);
        Ok(())
    })
}

/// Benjamini-Hochberg rejections; `out[i]` is 1 when hypothesis `i` is rejected.
///
/// # Safety
/// `p_values` must hold `n` doubles and `out` room for `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn sf_benjamini_hochberg(
    p_values: *const f64,
    n: usize,
    alpha: f64,
    out: *mut u8,
) -> SfStatus {
    guard(|| {
        let p = input(p_values, n, "p_values")?;
        let out = output(out, n, "out")?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")).into());
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("p-values must lie in [0, 1]").into());
        }
        for (o, r) in out.iter_mut().zip(benjamini_hochberg(p, alpha)) {
            *o = u8::from(r);
        }
        Ok(())
    })
}
