//! C ABI over `floquet-ness`.
//!
//! Objects are opaque heap handles created by `fns_*_new`-style functions and
//! released with the matching `fns_*_free`. Every fallible call returns an
//! [`FnsStatus`]; on failure [`fns_last_error_message`] describes the cause.
//! Inverse temperatures are absolute (not in units of the level gap).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use floquet_ness::config::RunConfig;
use floquet_ness::error::Error;
use floquet_ness::model::{FloquetModel, SystemSpec, Truncation};
use floquet_ness::ness::ness;
use floquet_ness::rates::{RateEngine, RateTable};

/// Result of a fallible call. Values 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnsStatus {
    Ok = 0,
    /// Invalid model, truncation, configuration, level index or β.
    InvalidInput = 2,
    /// Linear algebra or I/O failure.
    Numerical = 3,
    /// Ill-conditioned solve, route mismatch or unstable limit.
    Convergence = 4,
    NullPointer = 10,
    /// An output buffer has the wrong length.
    BufferSize = 11,
    /// A Rust panic was caught at the boundary.
    Panic = 12,
}

/// Validated model with its Floquet coupling matrix.
pub struct FnsModel {
    inner: FloquetModel,
}

/// Scattering samples for every incoming level; yields rates at any β.
pub struct FnsEngine {
    inner: RateEngine,
}

/// Floquet rates at one β.
pub struct FnsRateTable {
    inner: RateTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(FnsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => FnsStatus::InvalidInput,
            4 => FnsStatus::Convergence,
            _ => FnsStatus::Numerical,
        };
        Fail(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FnsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FnsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FnsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FnsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn level(j: usize, n: usize) -> Result<(), Fail> {
    if j == 0 || j > n {
        return Err(Error::InvalidLevel { index: j, levels: n }.into());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next `fns_*` call on the same thread.
#[no_mangle]
pub extern "C" fn fns_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds the driven three-level toy model at drive strength `lambda`.
/// Zero `nu_cut`, `e_cut` or `quad_points` keep the default truncation value.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fns_model_toy(
    lambda: f64,
    nu_cut: u32,
    e_cut: f64,
    quad_points: usize,
    out: *mut *mut FnsModel,
) -> FnsStatus {
    guard(|| {
        let mut trunc = Truncation::default();
        if nu_cut > 0 {
            trunc.nu_cut = nu_cut;
        }
        if e_cut != 0.0 {
            trunc.e_cut = e_cut;
        }
        if quad_points > 0 {
            trunc.quad_points = quad_points;
        }
        let inner = FloquetModel::new(SystemSpec::toy_model().with_lambda(lambda), trunc)?;
        put(out, Box::into_raw(Box::new(FnsModel { inner })), "out")
    })
}

/// Builds a model from the `[system]` and `[truncation]` sections of a TOML
/// run configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fns_model_from_toml(toml: *const c_char, out: *mut *mut FnsModel) -> FnsStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| Fail(FnsStatus::InvalidInput, format!("toml is not UTF-8: {e}")))?;
        let cfg = RunConfig::from_toml(text)?;
        let inner = FloquetModel::new(cfg.spec(), cfg.truncation.clone())?;
        put(out, Box::into_raw(Box::new(FnsModel { inner })), "out")
    })
}

/// # Safety
/// `model` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fns_model_free(model: *mut FnsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of internal levels, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fns_model_n_levels(model: *const FnsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_levels())
}

/// `E_2 − E_1`, the unit of the CLI's β values.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fns_model_level_gap(model: *const FnsModel, out: *mut f64) -> FnsStatus {
    guard(|| {
        let m = get(model, "model")?;
        put(out, m.inner.spec.level_gap(), "out")
    })
}

/// Solves the scattering problem on every quadrature node. This is the
/// expensive step; the engine then produces tables at any β cheaply.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fns_engine_new(model: *const FnsModel, out: *mut *mut FnsEngine) -> FnsStatus {
    guard(|| {
        let m = get(model, "model")?;
        let inner = RateEngine::new(m.inner.clone())?;
        put(out, Box::into_raw(Box::new(FnsEngine { inner })), "out")
    })
}

/// # Safety
/// `engine` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fns_engine_free(engine: *mut FnsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Rate from `(j, 0)` into `(jp, nu)` at inverse temperature `beta`.
///
/// # Safety
/// `engine` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fns_engine_rate(
    engine: *const FnsEngine,
    jp: usize,
    j: usize,
    nu: i32,
    beta: f64,
    out: *mut f64,
) -> FnsStatus {
    guard(|| {
        let e = get(engine, "engine")?;
        put(out, e.inner.rate(jp, j, nu, beta)?, "out")
    })
}

/// # Safety
/// `engine` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fns_engine_table(engine: *const FnsEngine, beta: f64, out: *mut *mut FnsRateTable) -> FnsStatus {
    guard(|| {
        let e = get(engine, "engine")?;
        let inner = e.inner.table(beta)?;
        put(out, Box::into_raw(Box::new(FnsRateTable { inner })), "out")
    })
}

/// # Safety
/// `table` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fns_table_free(table: *mut FnsRateTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// β of the table, or NaN for a NULL handle.
///
/// # Safety
/// `table` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fns_table_beta(table: *const FnsRateTable) -> f64 {
    table.as_ref().map_or(f64::NAN, |t| t.inner.beta)
}

/// # Safety
/// `table` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fns_table_n_levels(table: *const FnsRateTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.n_levels)
}

/// # Safety
/// `table` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fns_table_nu_cut(table: *const FnsRateTable) -> u32 {
    table.as_ref().map_or(0, |t| t.inner.nu_cut())
}

/// Per-sideband rate; zero for `|nu|` beyond the truncation.
///
/// # Safety
/// `table` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fns_table_rate(table: *const FnsRateTable, jp: usize, j: usize, nu: i32, out: *mut f64) -> FnsStatus {
    guard(|| {
        let t = &get(table, "table")?.inner;
        level(jp, t.n_levels)?;
        level(j, t.n_levels)?;
        put(out, t.rate(jp, j, nu), "out")
    })
}

/// Sum of the rates from `j` into `jp` over all sidebands.
///
/// # Safety
/// `table` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fns_table_total(table: *const FnsRateTable, jp: usize, j: usize, out: *mut f64) -> FnsStatus {
    guard(|| {
        let t = &get(table, "table")?.inner;
        level(jp, t.n_levels)?;
        level(j, t.n_levels)?;
        put(out, t.total(jp, j), "out")
    })
}

/// Steady-state populations, written to `out[0..len]`; `len` must equal the
/// number of levels.
///
/// # Safety
/// `table` must be a live handle; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fns_table_ness(table: *const FnsRateTable, out: *mut f64, len: usize) -> FnsStatus {
    guard(|| {
        let t = &get(table, "table")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != t.n_levels {
            return Err(Fail(FnsStatus::BufferSize, format!("need {} populations, buffer holds {len}", t.n_levels)));
        }
        let p = ness(t)?.p;
        ptr::copy_nonoverlapping(p.as_ptr(), out, len);
        Ok(())
    })
}
