use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ctxbroker_ffi::*;
use serde_json::{json, Value};

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    ctx_string_free(p);
    s
}

fn last_error() -> String {
    let p = ctx_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

const CATALOG: &str = r#"{"qoc_indicators": ["freshness"], "qos_indicators": ["availability"]}"#;

fn offer(id: &str, freshness: f64) -> String {
    json!({
        "service_id": id, "cloud_id": "a", "offered_topics": ["loc"],
        "qoc_offer": {"loc": [freshness]}, "qos_offer": [0.99]
    })
    .to_string()
}

#[test]
fn full_cycle_through_c_abi() {
    unsafe {
        let b = ctx_broker_new(c(CATALOG).as_ptr());
        assert!(!b.is_null());

        let mut out = ptr::null_mut();
        let status = ctx_broker_register(b, c(&offer("s1", 0.9)).as_ptr(), c("local://s1").as_ptr(), &mut out);
        assert_eq!(status, CtxStatus::Ok);
        let reg = take(out);

        let profile = r#"{"topics": ["loc"], "qoc_min": [[0.5]], "qos_min": [0.9]}"#;
        let status = ctx_broker_subscribe(b, c("c1").as_ptr(), c(profile).as_ptr(), c("local://c1").as_ptr(), &mut out);
        assert_eq!(status, CtxStatus::Ok);
        let sub = take(out);
        assert!(ctx_last_error_message().is_null());

        assert_eq!(ctx_broker_decision(b, c(&sub).as_ptr(), &mut out), CtxStatus::Ok);
        let decision: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(decision["decision"]["selected"], json!(["s1"]));

        let sample = r#"{"topic": "loc", "payload": "here", "produced_at": 5, "service_id": "s1"}"#;
        assert_eq!(ctx_broker_notify(b, c("s1").as_ptr(), c(sample).as_ptr()), CtxStatus::Ok);
        assert_eq!(ctx_broker_drain_outbox(b, &mut out), CtxStatus::Ok);
        let outbox: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(outbox.as_array().unwrap().len(), 1);
        assert_eq!(outbox[0]["message"]["type"], "notification");
        assert_eq!(outbox[0]["message"]["sample"]["payload"], "here");

        assert_eq!(ctx_broker_get_last(b, c(&sub).as_ptr(), c("loc").as_ptr(), &mut out), CtxStatus::Ok);
        let last: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(last["produced_at"], 5);

        assert_eq!(ctx_broker_pull_target(b, c(&sub).as_ptr(), c("loc").as_ptr(), &mut out), CtxStatus::Ok);
        let target = take(out);
        let pulled = r#"{"topic": "loc", "payload": "fresh", "produced_at": 9, "service_id": "s1"}"#;
        assert_eq!(ctx_broker_accept_pulled(b, c(&target).as_ptr(), c(pulled).as_ptr(), &mut out), CtxStatus::Ok);
        assert_eq!(serde_json::from_str::<Value>(&take(out)).unwrap()["payload"], "fresh");

        assert_eq!(ctx_broker_find_services(b, c("loc").as_ptr(), &mut out), CtxStatus::Ok);
        assert_eq!(take(out), r#"["s1"]"#);
        assert_eq!(ctx_broker_find_consumers(b, c("loc").as_ptr(), &mut out), CtxStatus::Ok);
        assert_eq!(serde_json::from_str::<Value>(&take(out)).unwrap(), json!([sub]));

        assert_eq!(ctx_broker_deregister(b, c(&reg).as_ptr()), CtxStatus::Ok);
        assert_eq!(ctx_broker_pull_target(b, c(&sub).as_ptr(), c("loc").as_ptr(), &mut out), CtxStatus::NoProvider);
        assert!(last_error().contains("loc"), "{}", last_error());
        assert_eq!(ctx_broker_drain_outbox(b, &mut out), CtxStatus::Ok);
        let outbox: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(outbox[0]["message"]["type"], "advisory");

        assert_eq!(ctx_broker_unsubscribe(b, c(&sub).as_ptr()), CtxStatus::Ok);
        assert_eq!(ctx_broker_unsubscribe(b, c(&sub).as_ptr()), CtxStatus::NotFound);
        ctx_broker_free(b);
    }
}

#[test]
fn error_statuses() {
    unsafe {
        assert!(ctx_broker_new(c("{").as_ptr()).is_null());
        assert!(last_error().starts_with("catalog"));
        assert!(ctx_broker_new(ptr::null()).is_null());

        let b = ctx_broker_new(c(CATALOG).as_ptr());
        let mut out = ptr::null_mut();
        assert_eq!(ctx_broker_unsubscribe(ptr::null_mut(), c("x").as_ptr()), CtxStatus::NullPointer);
        assert_eq!(ctx_broker_register(b, c("[]").as_ptr(), c("a").as_ptr(), &mut out), CtxStatus::InvalidJson);
        let bad = [0xffu8, 0];
        assert_eq!(ctx_broker_unsubscribe(b, bad.as_ptr() as *const c_char), CtxStatus::InvalidUtf8);

        let sample = r#"{"topic": "loc", "payload": 1, "produced_at": 1, "service_id": "ghost"}"#;
        assert_eq!(ctx_broker_notify(b, c("ghost").as_ptr(), c(sample).as_ptr()), CtxStatus::Unregistered);

        assert_eq!(ctx_broker_register(b, c(&offer("s1", 0.9)).as_ptr(), c("a").as_ptr(), &mut out), CtxStatus::Ok);
        ctx_string_free(out);
        assert_eq!(ctx_broker_register(b, c(&offer("s1", 0.9)).as_ptr(), c("a").as_ptr(), &mut out), CtxStatus::Conflict);
        ctx_broker_free(b);
        ctx_broker_free(ptr::null_mut());
        ctx_string_free(ptr::null_mut());
    }
}

#[test]
fn stateless_score() {
    let profile = r#"{"topics": ["loc"], "qoc_min": [[0.5]], "qos_min": [0.9], "weights": [[2.0]]}"#;
    let offers = format!("[{}, {}]", offer("s1", 0.6), offer("s2", 0.8));
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(ctx_score(c(profile).as_ptr(), c(&offers).as_ptr(), &mut out), CtxStatus::Ok);
        let d: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(d["selected"], json!(["s2"]));
        assert_eq!(d["max_score"], json!([1.6]));
    }
}

#[test]
fn header_declares_the_api() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ctxbroker.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    for name in [
        "typedef struct CtxBroker CtxBroker;",
        "CTX_STATUS_NO_PROVIDER = 6",
        "ctx_broker_new(",
        "ctx_broker_free(",
        "ctx_broker_subscribe(",
        "ctx_broker_unsubscribe(",
        "ctx_broker_register(",
        "ctx_broker_deregister(",
        "ctx_broker_notify(",
        "ctx_broker_pull_target(",
        "ctx_broker_accept_pulled(",
        "ctx_broker_get_last(",
        "ctx_broker_decision(",
        "ctx_broker_find_services(",
        "ctx_broker_find_consumers(",
        "ctx_broker_drain_outbox(",
        "ctx_score(",
        "ctx_last_error_message(",
        "ctx_string_free(",
    ] {
        assert!(header.contains(name), "header is missing {name}");
    }
}

/// Builds a small C program against the header and the shared library and
/// runs it. Skipped when no C compiler is installed.
#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("cc not found; skipping");
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let exe = std::env::temp_dir().join(format!("ctxbroker-ffi-smoke-{}", std::process::id()));
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-L")
        .arg(&lib_dir)
        .args(["-lctxbroker_ffi", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "compiling smoke.c failed");
    let output = Command::new(&exe).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    let _ = std::fs::remove_file(&exe);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(String::from_utf8_lossy(&output.stdout).trim(), "ok");
}
