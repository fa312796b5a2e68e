//! C ABI over the semexpand engine.
//!
//! Conventions:
//! - every fallible call returns an `SeStatus`; on failure a message is
//!   available from `se_last_error_message` on the same thread;
//! - handles (`SeSnapshot`, `SeHolder`) are opaque and must be released with
//!   their `_free` function;
//! - strings returned through out-pointers are owned by the caller and must
//!   be released with `se_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use semexpand::embedding::fallback_embed;
use semexpand::matching::{load_snapshot_dir, Snapshot, SnapshotHolder};
use semexpand::thresholds::quantile;
use semexpand::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    DataError = 4,
    UnknownMarket = 5,
    VersionRegression = 6,
    NoSnapshot = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

/// An immutable snapshot.
pub struct SeSnapshot(Snapshot);

/// A swappable snapshot reference shared by readers and one writer.
pub struct SeHolder(SnapshotHolder);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SeStatus, msg: impl Into<String>) -> SeStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> SeStatus {
    match e {
        Error::UnknownMarket(_) => SeStatus::UnknownMarket,
        Error::VersionRegression { .. } => SeStatus::VersionRegression,
        Error::NoSnapshot => SeStatus::NoSnapshot,
        Error::InvalidArgument(_) | Error::InvalidQuantile(_) => SeStatus::InvalidArgument,
        Error::Internal(_) => SeStatus::Internal,
        _ => SeStatus::DataError,
    }
}

fn from_error(e: Error) -> SeStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

/// Runs `f`, turning panics into `SeStatus::Internal`.
fn guard(f: impl FnOnce() -> SeStatus) -> SeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SeStatus::Internal, "panic inside semexpand"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SeStatus> {
    if p.is_null() {
        return Err(fail(SeStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SeStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> SeStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            SeStatus::Ok
        }
        Err(_) => fail(SeStatus::Internal, "output contains a nul byte"),
    }
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! lib {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e.into()),
        }
    };
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn se_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn se_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads and validates a snapshot directory.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_snapshot_load(dir: *const c_char, out: *mut *mut SeSnapshot) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return fail(SeStatus::NullPointer, "out is null");
        }
        let dir = tri!(str_arg(dir, "dir"));
        let snap = lib!(load_snapshot_dir(PathBuf::from(dir), None));
        *out = Box::into_raw(Box::new(SeSnapshot(snap)));
        SeStatus::Ok
    })
}

/// # Safety
/// `snap` must come from `se_snapshot_load` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn se_snapshot_free(snap: *mut SeSnapshot) {
    if !snap.is_null() {
        drop(Box::from_raw(snap));
    }
}

/// Version of a snapshot, or 0 for null.
///
/// # Safety
/// `snap` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn se_snapshot_version(snap: *const SeSnapshot) -> u64 {
    snap.as_ref().map_or(0, |s| s.0.version)
}

unsafe fn match_json(snap: &Snapshot, query: *const c_char, market: *const c_char, out: *mut *mut c_char) -> SeStatus {
    if out.is_null() {
        return fail(SeStatus::NullPointer, "out is null");
    }
    let query = tri!(str_arg(query, "query"));
    let market = tri!(str_arg(market, "market"));
    let recs = lib!(snap.match_query(query, market));
    put_string(out, lib!(serde_json::to_string(&recs)))
}

/// Matches `query` in `market`; writes a JSON array of match records.
///
/// # Safety
/// Pointers must be valid; `out` receives a string for `se_string_free`.
#[no_mangle]
pub unsafe extern "C" fn se_match_query(
    snap: *const SeSnapshot,
    query: *const c_char,
    market: *const c_char,
    out_json: *mut *mut c_char,
) -> SeStatus {
    guard(|| {
        let Some(s) = snap.as_ref() else {
            return fail(SeStatus::NullPointer, "snapshot is null");
        };
        match_json(&s.0, query, market, out_json)
    })
}

/// Expands `keyword` in `market`; writes one expansion record as JSON.
///
/// # Safety
/// Pointers must be valid; `out` receives a string for `se_string_free`.
#[no_mangle]
pub unsafe extern "C" fn se_expand_keyword(
    snap: *const SeSnapshot,
    keyword: *const c_char,
    market: *const c_char,
    out_json: *mut *mut c_char,
) -> SeStatus {
    guard(|| {
        let Some(s) = snap.as_ref() else {
            return fail(SeStatus::NullPointer, "snapshot is null");
        };
        if out_json.is_null() {
            return fail(SeStatus::NullPointer, "out is null");
        }
        let keyword = tri!(str_arg(keyword, "keyword"));
        let market = tri!(str_arg(market, "market"));
        let ex = lib!(s.0.expander(market));
        let rec = lib!(ex.expand_text(keyword));
        put_string(out_json, lib!(serde_json::to_string(&rec)))
    })
}

#[no_mangle]
pub extern "C" fn se_holder_new() -> *mut SeHolder {
    Box::into_raw(Box::new(SeHolder(SnapshotHolder::new())))
}

/// # Safety
/// `h` must come from `se_holder_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn se_holder_free(h: *mut SeHolder) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Current version, or 0 when nothing is installed.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn se_holder_version(h: *const SeHolder) -> u64 {
    h.as_ref().and_then(|h| h.0.version()).unwrap_or(0)
}

/// Loads `dir` and swaps it in. `out_previous` (nullable) receives the
/// replaced version, 0 if none.
///
/// # Safety
/// `h` must be a live handle and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn se_holder_refresh(h: *const SeHolder, dir: *const c_char, out_previous: *mut u64) -> SeStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(SeStatus::NullPointer, "holder is null");
        };
        let dir = PathBuf::from(tri!(str_arg(dir, "dir")));
        let (prev, _) = lib!(h.0.replace_with(|prev| load_snapshot_dir(&dir, prev)));
        if !out_previous.is_null() {
            *out_previous = prev.unwrap_or(0);
        }
        SeStatus::Ok
    })
}

/// Matches against the holder's current snapshot. `out_version`
/// (nullable) receives the version that produced the result.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string for `se_string_free`.
#[no_mangle]
pub unsafe extern "C" fn se_holder_match(
    h: *const SeHolder,
    query: *const c_char,
    market: *const c_char,
    out_json: *mut *mut c_char,
    out_version: *mut u64,
) -> SeStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(SeStatus::NullPointer, "holder is null");
        };
        let Some(snap) = h.0.load() else {
            return from_error(Error::NoSnapshot);
        };
        let s = match_json(&snap, query, market, out_json);
        if s == SeStatus::Ok && !out_version.is_null() {
            *out_version = snap.version;
        }
        s
    })
}

/// Writes the `dim`-dimensional fallback embedding of `text` into `out`,
/// which must hold at least `dim` floats.
///
/// # Safety
/// `out` must point to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn se_fallback_embed(text: *const c_char, dim: usize, out: *mut f32, out_len: usize) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return fail(SeStatus::NullPointer, "out is null");
        }
        if out_len < dim {
            return fail(SeStatus::BufferTooSmall, format!("need {dim} floats, buffer holds {out_len}"));
        }
        let text = tri!(str_arg(text, "text"));
        let v = lib!(fallback_embed(text, dim));
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(v.as_slice());
        SeStatus::Ok
    })
}

/// Linearly interpolated p-quantile of `n` values.
///
/// # Safety
/// `values` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_quantile(values: *const f64, n: usize, p: f64, out: *mut f64) -> SeStatus {
    guard(|| {
        if out.is_null() || (values.is_null() && n > 0) {
            return fail(SeStatus::NullPointer, "values or out is null");
        }
        let vals = if n == 0 { &[][..] } else { std::slice::from_raw_parts(values, n) };
        *out = lib!(quantile(vals, p));
        SeStatus::Ok
    })
}
