//! C ABI for the dialogic engine.
//!
//! An engine handle wraps the full HTTP-shaped service, so a host can drive
//! sessions by passing method, path and JSON body, without running a server.
//! Strings returned through out-pointers are owned by the caller and must be
//! released with [`dialogic_string_free`]. On any non-zero status, the
//! thread-local [`dialogic_last_error`] holds a message.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use base64::Engine as _;
use dialogic::api::{ApiBody, ApiRequest, Method, Service};
use dialogic::config::{build_service, ServiceConfig};
use dialogic::learner::grade_for_age;
use dialogic::prompt::parse_move_tags;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DialogicStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Internal = 5,
    Panic = 6,
}

/// Opaque engine handle.
pub struct DialogicEngine {
    service: Service,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type FfiResult<T> = Result<T, (DialogicStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> DialogicStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DialogicStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside dialogic");
            DialogicStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((DialogicStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (DialogicStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn out_ptr<T>(p: *mut T, name: &str) -> FfiResult<()> {
    if p.is_null() {
        Err((DialogicStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (DialogicStatus::Internal, "output contains a NUL byte".to_string()))
}

fn new_engine(config: &ServiceConfig, out: *mut *mut DialogicEngine) -> FfiResult<()> {
    out_ptr(out, "out")?;
    let service = build_service(config).map_err(|e| (DialogicStatus::Config, e.to_string()))?;
    let handle = Box::into_raw(Box::new(DialogicEngine { service }));
    unsafe { *out = handle };
    Ok(())
}

/// Create an engine with offline mock providers, in-memory storage and the
/// bundled fixture book.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dialogic_engine_new_offline(out: *mut *mut DialogicEngine) -> DialogicStatus {
    guard(|| new_engine(&ServiceConfig::offline(), out))
}

/// Create an engine from a TOML configuration file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialogic_engine_new_from_config(
    config_path: *const c_char,
    out: *mut *mut DialogicEngine,
) -> DialogicStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let config = ServiceConfig::load(path).map_err(|e| (DialogicStatus::Config, e.to_string()))?;
        new_engine(&config, out)
    })
}

/// Release an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from a `dialogic_engine_new_*` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dialogic_engine_free(engine: *mut DialogicEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Dispatch one API request. `target` is the path plus optional query string,
/// `body_json` may be null. On success `*out_status` holds the HTTP status and
/// `*out_body` a JSON document; binary bodies come back as
/// `{"media_type": ..., "data_base64": ...}`.
///
/// # Safety
/// String arguments must be NUL-terminated; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialogic_engine_dispatch(
    engine: *const DialogicEngine,
    method: *const c_char,
    target: *const c_char,
    body_json: *const c_char,
    out_status: *mut u16,
    out_body: *mut *mut c_char,
) -> DialogicStatus {
    guard(|| {
        let engine = engine
            .as_ref()
            .ok_or((DialogicStatus::NullArgument, "`engine` is null".to_string()))?;
        let method = str_arg(method, "method")?;
        let target = str_arg(target, "target")?;
        let body = opt_str_arg(body_json, "body_json")?;
        out_ptr(out_status, "out_status")?;
        out_ptr(out_body, "out_body")?;

        let mut req = ApiRequest::new(Method::parse(method), target);
        if let Some(b) = body {
            req.body = b.as_bytes().to_vec();
        }
        let resp = engine.service.dispatch(&req);
        let text = match resp.body {
            ApiBody::Json(v) => v.to_string(),
            ApiBody::Bytes { media_type, bytes } => serde_json::json!({
                "media_type": media_type,
                "data_base64": base64::engine::general_purpose::STANDARD.encode(bytes),
            })
            .to_string(),
        };
        *out_body = into_c_string(text)?;
        *out_status = resp.status;
        Ok(())
    })
}

/// Match a story section against the engine's knowledge base for a child of
/// `age_years`. `*out_json` receives an array of matches.
///
/// # Safety
/// `text` must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialogic_engine_match(
    engine: *const DialogicEngine,
    text: *const c_char,
    age_years: u8,
    out_json: *mut *mut c_char,
) -> DialogicStatus {
    guard(|| {
        let engine = engine
            .as_ref()
            .ok_or((DialogicStatus::NullArgument, "`engine` is null".to_string()))?;
        let text = str_arg(text, "text")?;
        out_ptr(out_json, "out_json")?;
        let cap = grade_for_age(age_years).map_err(|e| (DialogicStatus::InvalidArgument, e.to_string()))?;
        let orch = engine.service.orchestrator();
        let matches = orch
            .retriever()
            .match_section("ffi", text, cap, &orch.config().retrieval)
            .map_err(|e| (DialogicStatus::Internal, e.to_string()))?;
        let json = serde_json::to_string(&matches).map_err(|e| (DialogicStatus::Internal, e.to_string()))?;
        *out_json = into_c_string(json)?;
        Ok(())
    })
}

/// Grade rank (0 = Kindergarten .. 5 = Fifth Grade) for an age in years.
///
/// # Safety
/// `out_rank` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialogic_grade_for_age(age_years: u8, out_rank: *mut u8) -> DialogicStatus {
    guard(|| {
        out_ptr(out_rank, "out_rank")?;
        let grade = grade_for_age(age_years).map_err(|e| (DialogicStatus::InvalidArgument, e.to_string()))?;
        *out_rank = grade.rank();
        Ok(())
    })
}

/// Parse move tags out of a generated turn; `*out_json` receives the parsed
/// turn as JSON.
///
/// # Safety
/// `raw_turn` must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialogic_parse_move_tags(
    raw_turn: *const c_char,
    out_json: *mut *mut c_char,
) -> DialogicStatus {
    guard(|| {
        let raw = str_arg(raw_turn, "raw_turn")?;
        out_ptr(out_json, "out_json")?;
        let parsed = parse_move_tags(raw);
        let json = serde_json::to_string(&parsed).map_err(|e| (DialogicStatus::Internal, e.to_string()))?;
        *out_json = into_c_string(json)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn dialogic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dialogic_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Free a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dialogic_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> Option<String> {
        let p = dialogic_last_error();
        (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
    }

    #[test]
    fn grade_for_age_ranks() {
        let mut rank = 99u8;
        assert_eq!(unsafe { dialogic_grade_for_age(8, &mut rank) }, DialogicStatus::Ok);
        assert_eq!(rank, 2);
        assert_eq!(unsafe { dialogic_grade_for_age(5, &mut rank) }, DialogicStatus::Ok);
        assert_eq!(rank, 0);
        assert_eq!(unsafe { dialogic_grade_for_age(2, &mut rank) }, DialogicStatus::InvalidArgument);
        assert!(last_error().unwrap().contains('2'));
        assert_eq!(unsafe { dialogic_grade_for_age(8, ptr::null_mut()) }, DialogicStatus::NullArgument);
    }

    #[test]
    fn success_clears_last_error() {
        let mut rank = 0u8;
        unsafe { dialogic_grade_for_age(1, &mut rank) };
        assert!(last_error().is_some());
        unsafe { dialogic_grade_for_age(9, &mut rank) };
        assert!(last_error().is_none());
    }

    #[test]
    fn invalid_utf8_is_reported() {
        let bad = [0xffu8, 0xfe, 0];
        let mut out = ptr::null_mut();
        let status = unsafe { dialogic_parse_move_tags(bad.as_ptr() as *const c_char, &mut out) };
        assert_eq!(status, DialogicStatus::InvalidUtf8);
        assert!(out.is_null());
    }

    #[test]
    fn version_is_crate_version() {
        let v = unsafe { CStr::from_ptr(dialogic_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
