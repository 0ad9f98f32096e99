//! C ABI over the deterministic analysis primitives: the location-sequence
//! codec, hunk-level diffing and classification, and taint-trace parsing,
//! coverage, and the new-vulnerability check.
//!
//! Conventions: every function returns a [`TmStatus`]; results come back
//! through out-pointers. Handles (`TmSequence`, `TmTrace`) are opaque and
//! must be released with their `_free` function; strings returned through
//! `char **` out-pointers are NUL-terminated, owned by the caller, and
//! released with `tm_string_free`. On any non-OK status,
//! `tm_last_error_message` returns a thread-local description valid until
//! the next call on the same thread.
//!
//! Safety contract for every `unsafe extern "C"` function here: pointer
//! arguments must be NULL or valid for the access the signature implies
//! (NUL-terminated strings for `const char *`, writable slots for
//! out-pointers, live handles from this library for handle pointers), and
//! handles must not be used after their `_free`.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use libc::{c_char, c_double, c_int};

use taintmend::hunks::{classify_diff, diff_lines, to_location_sequence, HunkClassification};
use taintmend::sequence::{parse_sequence, serialize_sequence, LocationSequence, SequenceError};
use taintmend::trace::{
    introduces_new_vulnerability, parse_trace_log, taint_statement_coverage, TaintTrace,
};

/// Status codes returned by every `tm_*` function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmStatus {
    TmOk = 0,
    TmNullArgument = 1,
    TmInvalidUtf8 = 2,
    TmParseError = 3,
    TmInvariantViolation = 4,
    TmInternalError = 5,
}

/// Verdict of `tm_diff_classify`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmHunkClass {
    TmUnchanged = 0,
    TmSingleHunk = 1,
    TmMultiHunk = 2,
}

/// Opaque parsed location sequence.
pub struct TmSequence(LocationSequence);

/// Opaque parsed taint trace.
pub struct TmTrace(TaintTrace);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: TmStatus, message: &str) -> TmStatus {
    set_error(message);
    status
}

/// Description of the most recent failure on this thread. Valid until the
/// next `tm_*` call on the same thread; never NULL.
#[no_mangle]
pub extern "C" fn tm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, TmStatus> {
    if ptr.is_null() {
        return Err(fail(TmStatus::TmNullArgument, &format!("{name} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(TmStatus::TmInvalidUtf8, &format!("{name} is not valid UTF-8")))
}

fn guard<F: FnOnce() -> TmStatus>(body: F) -> TmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(TmStatus::TmInternalError, "internal panic"),
    }
}

fn sequence_status(err: &SequenceError) -> TmStatus {
    match err {
        SequenceError::Parse { .. } => TmStatus::TmParseError,
        SequenceError::Invariant(_) => TmStatus::TmInvariantViolation,
    }
}

fn export_string(text: String, out: *mut *mut c_char) -> TmStatus {
    match CString::new(text) {
        Ok(cstring) => {
            unsafe { *out = cstring.into_raw() };
            TmStatus::TmOk
        }
        Err(_) => fail(TmStatus::TmInternalError, "output contains NUL"),
    }
}

fn split_text_lines(text: &str) -> Vec<String> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Vec::new();
    }
    body.split('\n').map(str::to_owned).collect()
}

/// Parses the `{1,[ADD],2,[3]}` notation into a sequence handle.
#[no_mangle]
pub unsafe extern "C" fn tm_sequence_parse(
    text: *const c_char,
    out: *mut *mut TmSequence,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            return fail(TmStatus::TmNullArgument, "out is NULL");
        }
        let text = match utf8_arg(text, "text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        match parse_sequence(text) {
            Ok(sequence) => {
                *out = Box::into_raw(Box::new(TmSequence(sequence)));
                TmStatus::TmOk
            }
            Err(err) => fail(sequence_status(&err), &err.to_string()),
        }
    })
}

/// Canonical text form of a sequence; release with `tm_string_free`.
#[no_mangle]
pub unsafe extern "C" fn tm_sequence_canonical(
    sequence: *const TmSequence,
    out: *mut *mut c_char,
) -> TmStatus {
    guard(|| {
        if sequence.is_null() || out.is_null() {
            return fail(TmStatus::TmNullArgument, "sequence or out is NULL");
        }
        export_string(serialize_sequence(&(*sequence).0), out)
    })
}

/// Line count of the anchoring function version.
#[no_mangle]
pub unsafe extern "C" fn tm_sequence_anchor_length(
    sequence: *const TmSequence,
    out: *mut usize,
) -> TmStatus {
    guard(|| {
        if sequence.is_null() || out.is_null() {
            return fail(TmStatus::TmNullArgument, "sequence or out is NULL");
        }
        *out = (*sequence).0.anchor_length();
        TmStatus::TmOk
    })
}

#[no_mangle]
pub unsafe extern "C" fn tm_sequence_free(sequence: *mut TmSequence) {
    if !sequence.is_null() {
        drop(Box::from_raw(sequence));
    }
}

/// Diffs two function texts and returns the canonical location sequence of
/// the edit against the old version's numbering.
#[no_mangle]
pub unsafe extern "C" fn tm_diff_sequence(
    old_text: *const c_char,
    new_text: *const c_char,
    out: *mut *mut c_char,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            return fail(TmStatus::TmNullArgument, "out is NULL");
        }
        let old_text = match utf8_arg(old_text, "old_text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let new_text = match utf8_arg(new_text, "new_text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let old = split_text_lines(old_text);
        let new = split_text_lines(new_text);
        if old.is_empty() {
            return fail(TmStatus::TmInvariantViolation, "old text has no lines");
        }
        let diff = diff_lines(&old, &new);
        match to_location_sequence(&diff, old.len()) {
            Ok(sequence) => export_string(serialize_sequence(&sequence), out),
            Err(err) => fail(TmStatus::TmInternalError, &err.to_string()),
        }
    })
}

/// Classifies the edit between two function texts.
#[no_mangle]
pub unsafe extern "C" fn tm_diff_classify(
    old_text: *const c_char,
    new_text: *const c_char,
    out: *mut TmHunkClass,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            return fail(TmStatus::TmNullArgument, "out is NULL");
        }
        let old_text = match utf8_arg(old_text, "old_text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let new_text = match utf8_arg(new_text, "new_text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let old = split_text_lines(old_text);
        let new = split_text_lines(new_text);
        let class = match classify_diff(&diff_lines(&old, &new)) {
            HunkClassification::Unchanged => TmHunkClass::TmUnchanged,
            HunkClassification::SingleHunk => TmHunkClass::TmSingleHunk,
            HunkClassification::MultiHunk => TmHunkClass::TmMultiHunk,
        };
        *out = class;
        TmStatus::TmOk
    })
}

/// Parses a trace log (`SOURCE`/`STMT`/`SINK`/`TOTAL` records).
#[no_mangle]
pub unsafe extern "C" fn tm_trace_parse(
    log_text: *const c_char,
    out: *mut *mut TmTrace,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            return fail(TmStatus::TmNullArgument, "out is NULL");
        }
        let log_text = match utf8_arg(log_text, "log_text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        match parse_trace_log(log_text) {
            Ok(trace) => {
                *out = Box::into_raw(Box::new(TmTrace(trace)));
                TmStatus::TmOk
            }
            Err(err) => fail(TmStatus::TmParseError, &err.to_string()),
        }
    })
}

/// Taint statement coverage of a parsed trace, in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn tm_trace_coverage(
    trace: *const TmTrace,
    out: *mut c_double,
) -> TmStatus {
    guard(|| {
        if trace.is_null() || out.is_null() {
            return fail(TmStatus::TmNullArgument, "trace or out is NULL");
        }
        *out = taint_statement_coverage(&(*trace).0);
        TmStatus::TmOk
    })
}

/// Writes 1 when the patched trace shows a different CWE type or taint sink
/// than the original (a new vulnerability), 0 otherwise.
#[no_mangle]
pub unsafe extern "C" fn tm_trace_new_vuln(
    original: *const TmTrace,
    patched: *const TmTrace,
    out: *mut c_int,
) -> TmStatus {
    guard(|| {
        if original.is_null() || patched.is_null() || out.is_null() {
            return fail(TmStatus::TmNullArgument, "original, patched, or out is NULL");
        }
        *out = introduces_new_vulnerability(&(*original).0, &(*patched).0) as c_int;
        TmStatus::TmOk
    })
}

#[no_mangle]
pub unsafe extern "C" fn tm_trace_free(trace: *mut TmTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Releases a string returned through a `char **` out-pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}
