use std::ffi::{c_char, CStr, CString};
use std::ptr;

use dialogic_ffi::*;
use serde_json::{json, Value};

struct Engine(*mut DialogicEngine);

impl Engine {
    fn offline() -> Self {
        let mut raw = ptr::null_mut();
        assert_eq!(unsafe { dialogic_engine_new_offline(&mut raw) }, DialogicStatus::Ok);
        assert!(!raw.is_null());
        Engine(raw)
    }

    fn call(&self, method: &str, target: &str, body: Option<Value>) -> (u16, Value) {
        let method = CString::new(method).unwrap();
        let target = CString::new(target).unwrap();
        let body = body.map(|b| CString::new(b.to_string()).unwrap());
        let mut status = 0u16;
        let mut out: *mut c_char = ptr::null_mut();
        let rc = unsafe {
            dialogic_engine_dispatch(
                self.0,
                method.as_ptr(),
                target.as_ptr(),
                body.as_ref().map_or(ptr::null(), |b| b.as_ptr()),
                &mut status,
                &mut out,
            )
        };
        assert_eq!(rc, DialogicStatus::Ok);
        (status, take_json(out))
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        unsafe { dialogic_engine_free(self.0) };
    }
}

fn take_json(p: *mut c_char) -> Value {
    assert!(!p.is_null());
    let v = serde_json::from_str(unsafe { CStr::from_ptr(p) }.to_str().unwrap()).unwrap();
    unsafe { dialogic_string_free(p) };
    v
}

#[test]
fn offline_engine_runs_a_story_only_session() {
    let engine = Engine::offline();
    let (status, body) = engine.call("GET", "/healthz", None);
    assert_eq!(status, 200);
    assert_eq!(body["status"], "ok");

    let (status, body) =
        engine.call("POST", "/sessions", Some(json!({ "child_id": "ana", "book_id": "dinosaur-seaside" })));
    assert_eq!(status, 201);
    let id = body["session"]["session_id"].as_str().unwrap().to_string();
    for text in ["My name is Ana.", "I am six.", "I like Peppa Pig."] {
        let (status, _) = engine.call("POST", &format!("/sessions/{id}/turns"), Some(json!({ "text": text })));
        assert_eq!(status, 200);
    }
    let mode = json!({ "interaction_enabled": false, "frequency": { "kind": "every_page" },
                       "knowledge_extension_enabled": false, "narration_enabled": false });
    let (status, _) = engine.call("PUT", &format!("/sessions/{id}/mode"), Some(mode));
    assert_eq!(status, 200);
    for _ in 0..3 {
        let (status, _) =
            engine.call("POST", &format!("/sessions/{id}/turns"), Some(json!({ "signal": "next_page" })));
        assert_eq!(status, 200);
    }
    let (_, body) = engine.call("GET", &format!("/sessions/{id}"), None);
    assert_eq!(body["session"]["phase"], "completed");

    let (status, body) = engine.call("GET", "/dashboard/ana", None);
    assert_eq!(status, 200);
    assert_eq!(body["books_completed"], 1);
    assert_eq!(body["history"][0]["book_id"], "dinosaur-seaside");
}

#[test]
fn dispatch_reports_api_errors_as_json() {
    let engine = Engine::offline();
    let (status, body) = engine.call("GET", "/books/missing", None);
    assert_eq!(status, 404);
    assert_eq!(body["error"]["code"], "book_not_found");
    let (status, body) = engine.call("POST", "/sessions", Some(json!({ "child_id": "x" })));
    assert_eq!(status, 422);
    assert_eq!(body["error"]["fields"], json!(["book_id"]));
}

#[test]
fn engine_match_is_grade_gated() {
    let engine = Engine::offline();
    let text = CString::new("They finally arrived at the ocean.").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dialogic_engine_match(engine.0, text.as_ptr(), 8, &mut out) }, DialogicStatus::Ok);
    let matches = take_json(out);
    assert_eq!(matches[0]["entry_id"], "2-ess2-water");

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dialogic_engine_match(engine.0, text.as_ptr(), 5, &mut out) }, DialogicStatus::Ok);
    assert_eq!(take_json(out), json!([]));

    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { dialogic_engine_match(engine.0, text.as_ptr(), 40, &mut out) },
        DialogicStatus::InvalidArgument
    );
    assert!(out.is_null());
}

#[test]
fn parse_move_tags_returns_moves() {
    let raw = CString::new("[Opening] Hi Mia! [Scaffolding] What melts ice?").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dialogic_parse_move_tags(raw.as_ptr(), &mut out) }, DialogicStatus::Ok);
    let parsed = take_json(out);
    let tags: Vec<&str> = parsed["moves"].as_array().unwrap().iter().map(|m| m["tag"].as_str().unwrap()).collect();
    assert_eq!(tags.len(), 2);
    assert!(!parsed["clean_text"].as_str().unwrap().contains('['));
}

#[test]
fn null_arguments_are_rejected() {
    let mut status = 0u16;
    let mut out = ptr::null_mut();
    let get = CString::new("GET").unwrap();
    let rc = unsafe { dialogic_engine_dispatch(ptr::null(), get.as_ptr(), get.as_ptr(), ptr::null(), &mut status, &mut out) };
    assert_eq!(rc, DialogicStatus::NullArgument);
    let msg = unsafe { CStr::from_ptr(dialogic_last_error()) }.to_str().unwrap().to_string();
    assert!(msg.contains("engine"));
    assert_eq!(unsafe { dialogic_engine_new_offline(ptr::null_mut()) }, DialogicStatus::NullArgument);
    let missing = CString::new("/nonexistent/dialogic.toml").unwrap();
    let mut raw = ptr::null_mut();
    assert_eq!(unsafe { dialogic_engine_new_from_config(missing.as_ptr(), &mut raw) }, DialogicStatus::Config);
    assert!(raw.is_null());
    unsafe { dialogic_engine_free(ptr::null_mut()) };
    unsafe { dialogic_string_free(ptr::null_mut()) };
}

#[test]
fn header_declares_the_exported_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dialogic.h")).unwrap();
    for name in [
        "dialogic_engine_new_offline",
        "dialogic_engine_new_from_config",
        "dialogic_engine_free",
        "dialogic_engine_dispatch",
        "dialogic_engine_match",
        "dialogic_grade_for_age",
        "dialogic_parse_move_tags",
        "dialogic_last_error",
        "dialogic_version",
        "dialogic_string_free",
        "typedef struct DialogicEngine DialogicEngine",
        "DIALOGIC_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let Ok(out) = std::process::Command::new(&cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child.stdin.take().unwrap().write_all(b"#include \"dialogic.h\"\nint main(void) { return 0; }\n")?;
            child.wait_with_output()
        })
    else {
        eprintln!("no C compiler; skipping header compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
