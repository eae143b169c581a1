//! C ABI over `regionmix`.
//!
//! Every call returns an [`RmStatus`]; on failure the message is kept per
//! thread and can be read with [`rm_last_error_message`]. Models are opaque
//! handles created by [`rm_model_from_json`] and released with
//! [`rm_model_free`]. Symbols cross the boundary as alphabet indices, start
//! symbols as start-set positions (in alphabet order).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use regionmix::dagger::{dagger_first_passage, sample_dagger};
use regionmix::first_passage::{build_Q, first_passage_summary, invariant_vector};
use regionmix::io::{parse_model_config, ParsedModel};
use regionmix::kac::{kac_cylinder, sample_stationary, stationarity_defect, KacMeasure};
use regionmix::regeneration::sample_regenerated;
use regionmix::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidModel = 4,
    InvalidArgument = 5,
    NotStationary = 6,
    Numerical = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque model handle.
pub struct RmModel {
    parsed: ParsedModel,
    kac: KacMeasure,
    pi_hat: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> RmStatus {
    match e {
        Error::Config { .. } => RmStatus::Config,
        Error::NotStationary(_) => RmStatus::NotStationary,
        Error::Singular(_) | Error::Inconclusive(_) | Error::Truncated { .. } | Error::RejectionCap { .. } => {
            RmStatus::Numerical
        }
        Error::EmptyWord
        | Error::EmptyWordSet
        | Error::InvalidArgument(_)
        | Error::InvalidDistribution(_)
        | Error::SymbolOutOfRange(_)
        | Error::UnknownSymbol(_) => RmStatus::InvalidArgument,
        _ => RmStatus::InvalidModel,
    }
}

fn guard<F>(f: F) -> RmStatus
where
    F: FnOnce() -> Result<(), (RmStatus, String)>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RmStatus::Panic
        }
    }
}

fn lib<T>(r: regionmix::Result<T>) -> Result<T, (RmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (RmStatus, String) {
    (RmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(m: *const RmModel) -> Result<&'a RmModel, (RmStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn out_slice<'a, T>(buf: *mut T, len: usize, need: usize) -> Result<&'a mut [T], (RmStatus, String)> {
    if buf.is_null() {
        return Err(null("output buffer"));
    }
    if len < need {
        return Err((RmStatus::BufferTooSmall, format!("buffer holds {len}, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(buf, need))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), (RmStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = v;
    Ok(())
}

fn build(text: &str) -> regionmix::Result<RmModel> {
    let parsed = parse_model_config(text)?;
    let (kac, q) = match &parsed.dagger {
        Some(dm) => (dm.kac()?, dagger_first_passage(dm)?.q),
        None => (KacMeasure::new(&parsed.model)?, build_Q(&parsed.model)?),
    };
    let pi_hat = invariant_vector(&q).pi_hat;
    Ok(RmModel { parsed, kac, pi_hat })
}

/// Parses a JSON model config (optionally carrying acceptance
/// probabilities) and stores a new handle in `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rm_model_from_json(json: *const c_char, out: *mut *mut RmModel) -> RmStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (RmStatus::InvalidUtf8, e.to_string()))?;
        let model = lib(build(text))?;
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`rm_model_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rm_model_free(model: *mut RmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rm_model_n_symbols(model: *const RmModel, out: *mut usize) -> RmStatus {
    guard(|| write(out, model_ref(model)?.parsed.model.n_symbols()))
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rm_model_n_starts(model: *const RmModel, out: *mut usize) -> RmStatus {
    guard(|| write(out, model_ref(model)?.parsed.model.n_starts()))
}

/// Alphabet index of the symbol called `name`.
///
/// # Safety
/// `model` must be a live handle, `name` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rm_model_symbol_index(model: *const RmModel, name: *const c_char, out: *mut usize) -> RmStatus {
    guard(|| {
        let m = model_ref(model)?;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|e| (RmStatus::InvalidUtf8, e.to_string()))?;
        write(out, lib(m.parsed.model.symbol(name))?)
    })
}

/// Expected region length per start symbol (`n_starts` values).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rm_expected_times(model: *const RmModel, out: *mut f64, len: usize) -> RmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let e = match &m.parsed.dagger {
            Some(dm) => lib(dagger_first_passage(dm))?.summary.expected_times(),
            None => lib(first_passage_summary(&m.parsed.model))?.expected_times(),
        };
        out_slice(out, len, e.len())?.copy_from_slice(&e);
        Ok(())
    })
}

/// Solved weights π per start symbol (`n_starts` values).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rm_weights(model: *const RmModel, out: *mut f64, len: usize) -> RmStatus {
    guard(|| {
        let pi = &model_ref(model)?.kac.weights().pi;
        out_slice(out, len, pi.len())?.copy_from_slice(pi);
        Ok(())
    })
}

/// Stationary probability of the cylinder `word[0..len]`.
///
/// # Safety
/// `word` must point to `len` indices and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn rm_kac_cylinder(model: *const RmModel, word: *const usize, len: usize, out: *mut f64) -> RmStatus {
    guard(|| {
        let m = model_ref(model)?;
        if word.is_null() {
            return Err(null("word"));
        }
        let w = std::slice::from_raw_parts(word, len);
        write(out, lib(kac_cylinder(&m.kac, w))?)
    })
}

/// Largest shift defect over words of length at most `max_len`.
///
/// # Safety
/// `model` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rm_stationarity_defect(model: *const RmModel, max_len: usize, out: *mut f64) -> RmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let r = match &m.parsed.dagger {
            Some(_) => lib(regionmix::dagger::dagger_stationarity_defect(&m.kac, max_len))?,
            None => lib(stationarity_defect(&m.kac, max_len))?,
        };
        write(out, r.defect)
    })
}

/// Fills `out[0..len]` with a regenerated trace started from π̂.
///
/// # Safety
/// `out` must hold `len` indices.
#[no_mangle]
pub unsafe extern "C" fn rm_sample_regenerated(model: *const RmModel, seed: u64, out: *mut usize, len: usize) -> RmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dst = out_slice(out, len, len)?;
        let symbols = match &m.parsed.dagger {
            Some(dm) => lib(sample_dagger(dm, &m.pi_hat, len, seed))?.symbols,
            None => lib(sample_regenerated(&m.parsed.model, &m.pi_hat, len, seed))?.symbols,
        };
        dst.copy_from_slice(&symbols);
        Ok(())
    })
}

/// Fills `out[0..len]` with a sample of the stationary process.
///
/// # Safety
/// `out` must hold `len` indices.
#[no_mangle]
pub unsafe extern "C" fn rm_sample_stationary(model: *const RmModel, seed: u64, out: *mut usize, len: usize) -> RmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dst = out_slice(out, len, len)?;
        dst.copy_from_slice(&lib(sample_stationary(&m.kac, len, seed))?);
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn rm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn rm_status_str(status: RmStatus) -> *const c_char {
    let s: &'static CStr = match status {
        RmStatus::Ok => c"ok",
        RmStatus::NullPointer => c"null pointer",
        RmStatus::InvalidUtf8 => c"invalid UTF-8",
        RmStatus::Config => c"config error",
        RmStatus::InvalidModel => c"invalid model",
        RmStatus::InvalidArgument => c"invalid argument",
        RmStatus::NotStationary => c"weights not stationary",
        RmStatus::Numerical => c"numerical failure",
        RmStatus::BufferTooSmall => c"buffer too small",
        RmStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}
