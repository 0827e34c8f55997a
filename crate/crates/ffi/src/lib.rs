//! C ABI over the schema-evolution engine: opaque session handles, error
//! codes, and JSON strings for structured results so any language with a
//! C FFI can drive perturbation and scoring.
//!
//! Strings returned by these functions are heap-allocated and must be
//! released with [`ss_string_free`].

use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int};
use std::ptr;

use schemashift::metrics::{column_match_f1, table_match_f1};
use schemashift::perturb::{perturb, PType, PerturbOptions};
use schemashift::schema::{parse_ddl, render_ddl, validate};
use schemashift::sql::extract_refs;
use schemashift::synth::Synthesizer;
use schemashift::values::{dump_sql, populate, PopulateOptions};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    IntegrityError = 4,
    PerturbError = 5,
    ExecutionError = 6,
}

/// Opaque session: seed, options and the deterministic proposal backend.
pub struct SsSession {
    seed: u64,
    options: PerturbOptions,
    synth: Synthesizer,
    last_error: Option<CString>,
}

fn set_error(session: &mut SsSession, message: impl Into<Vec<u8>>) {
    session.last_error = CString::new(message).ok();
}

unsafe fn arg_str<'a>(ptr: *const c_char) -> Result<&'a str, SsStatus> {
    if ptr.is_null() {
        return Err(SsStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| SsStatus::InvalidUtf8)
}

fn out_string(s: String, out: *mut *mut c_char) -> SsStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            SsStatus::Ok
        }
        Err(_) => SsStatus::InvalidUtf8,
    }
}

/// Create a session with a deterministic offline proposal backend.
#[no_mangle]
pub extern "C" fn ss_session_new(seed: u64) -> *mut SsSession {
    Box::into_raw(Box::new(SsSession {
        seed,
        options: PerturbOptions::default(),
        synth: Synthesizer::mock(seed),
        last_error: None,
    }))
}

/// Destroy a session created by [`ss_session_new`].
///
/// # Safety
/// `session` must be a pointer returned by `ss_session_new`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_session_free(session: *mut SsSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Message for the session's most recent failure, or NULL. The pointer is
/// owned by the session and valid until the next call on it.
///
/// # Safety
/// `session` must be a live session pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_last_error(session: *const SsSession) -> *const c_char {
    if session.is_null() {
        return ptr::null();
    }
    match &(*session).last_error {
        Some(message) => message.as_ptr(),
        None => ptr::null(),
    }
}

/// Release a string returned by any `ss_*` function.
///
/// # Safety
/// `s` must have been returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Validate DDL text. On success writes a JSON array of violations (empty
/// when the schema is valid) to `out_json`.
///
/// # Safety
/// Pointers must be valid; `out_json` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ss_validate_ddl(
    ddl: *const c_char,
    out_json: *mut *mut c_char,
) -> SsStatus {
    if out_json.is_null() {
        return SsStatus::NullArgument;
    }
    let ddl = match arg_str(ddl) {
        Ok(s) => s,
        Err(status) => return status,
    };
    match parse_ddl(ddl) {
        Ok(schema) => {
            let violations = validate(&schema);
            match serde_json::to_string(&violations) {
                Ok(json) => out_string(json, out_json),
                Err(_) => SsStatus::IntegrityError,
            }
        }
        Err(e) => {
            let payload = serde_json::json!([{ "code": "PARSE", "message": e.to_string() }]);
            let _ = out_string(payload.to_string(), out_json);
            SsStatus::ParseError
        }
    }
}

/// Extract alias-resolved references of a query against a schema. Writes
/// `{"tables": [...], "columns": [[table, column], ...]}`.
///
/// # Safety
/// Pointers must be valid; `out_json` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ss_extract_refs(
    ddl: *const c_char,
    sql: *const c_char,
    out_json: *mut *mut c_char,
) -> SsStatus {
    if out_json.is_null() {
        return SsStatus::NullArgument;
    }
    let (ddl, sql) = match (arg_str(ddl), arg_str(sql)) {
        (Ok(d), Ok(s)) => (d, s),
        (Err(status), _) | (_, Err(status)) => return status,
    };
    let schema = match parse_ddl(ddl) {
        Ok(s) => s,
        Err(_) => return SsStatus::ParseError,
    };
    match extract_refs(sql, &schema) {
        Ok(refs) => match serde_json::to_string(&refs) {
            Ok(json) => out_string(json, out_json),
            Err(_) => SsStatus::ParseError,
        },
        Err(_) => SsStatus::ParseError,
    }
}

/// Apply one perturbation type to an instance. Writes a JSON object with
/// the evolved DDL, gold text, evolution record and review flag.
///
/// # Safety
/// `session` must be live; string pointers valid; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ss_perturb(
    session: *mut SsSession,
    ddl: *const c_char,
    gold_sql: *const c_char,
    ptype: *const c_char,
    out_json: *mut *mut c_char,
) -> SsStatus {
    if session.is_null() || out_json.is_null() {
        return SsStatus::NullArgument;
    }
    let session = &mut *session;
    let (ddl, gold, ptype_text) = match (arg_str(ddl), arg_str(gold_sql), arg_str(ptype)) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        _ => return SsStatus::NullArgument,
    };
    let ptype: PType = match ptype_text.parse() {
        Ok(p) => p,
        Err(e) => {
            set_error(session, e);
            return SsStatus::PerturbError;
        }
    };
    let schema = match parse_ddl(ddl) {
        Ok(s) => s,
        Err(e) => {
            set_error(session, e.to_string());
            return SsStatus::ParseError;
        }
    };
    let instance = schemashift::perturb::Instance {
        instance_id: "ffi".into(),
        db_id: schema.db_id.clone(),
        nlq: String::new(),
        schema,
        gold: schemashift::perturb::Gold::Sql(gold.to_string()),
    };
    match perturb(
        &instance,
        ptype,
        &session.options,
        &session.synth,
        None,
        session.seed,
    ) {
        Ok(out) => {
            let payload = serde_json::json!({
                "schema_ddl": render_ddl(&out.evolved.schema),
                "gold": out.evolved.gold.as_text(),
                "evolution": out.record,
                "needs_review": out.needs_review,
            });
            out_string(payload.to_string(), out_json)
        }
        Err(e) => {
            set_error(session, format!("{}: {e}", e.code()));
            SsStatus::PerturbError
        }
    }
}

/// Score a prediction against a gold query. Writes
/// `{"table": {...}, "column": {...}}` with precision/recall/F1.
///
/// # Safety
/// Pointers must be valid; `out_json` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ss_score_pair(
    ddl: *const c_char,
    pred_sql: *const c_char,
    gold_sql: *const c_char,
    out_json: *mut *mut c_char,
) -> SsStatus {
    if out_json.is_null() {
        return SsStatus::NullArgument;
    }
    let (ddl, pred, gold) = match (arg_str(ddl), arg_str(pred_sql), arg_str(gold_sql)) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        _ => return SsStatus::NullArgument,
    };
    let schema = match parse_ddl(ddl) {
        Ok(s) => s,
        Err(_) => return SsStatus::ParseError,
    };
    let table = match table_match_f1(pred, gold, &schema) {
        Ok(m) => m,
        Err(_) => return SsStatus::ParseError,
    };
    let column = match column_match_f1(pred, gold, &schema) {
        Ok(m) => m,
        Err(_) => return SsStatus::ParseError,
    };
    let payload = serde_json::json!({ "table": table, "column": column });
    out_string(payload.to_string(), out_json)
}

/// Populate a schema with synthetic rows and return a SQLite-compatible
/// SQL dump.
///
/// # Safety
/// Pointers must be valid; `out_sql` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ss_populate_dump(
    ddl: *const c_char,
    rows_per_table: c_int,
    seed: u64,
    out_sql: *mut *mut c_char,
) -> SsStatus {
    if out_sql.is_null() {
        return SsStatus::NullArgument;
    }
    let ddl = match arg_str(ddl) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let schema = match parse_ddl(ddl) {
        Ok(s) => s,
        Err(_) => return SsStatus::ParseError,
    };
    let opts = PopulateOptions {
        rows_per_table: rows_per_table.max(0) as usize,
        seed,
    };
    match populate(&schema, &opts) {
        Ok(db) => out_string(dump_sql(&db), out_sql),
        Err(_) => SsStatus::ExecutionError,
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}
