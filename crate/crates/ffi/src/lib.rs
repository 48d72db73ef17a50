//! C ABI for the context broker.
//!
//! A `CtxBroker` is an opaque handle around an in-process broker. Structured
//! values (profiles, offers, samples, decision matrices) cross the boundary as
//! UTF-8 JSON strings in the same form the HTTP service uses. Every call
//! returns a `CtxStatus`; on failure `ctx_last_error_message` describes the
//! error for the calling thread.
//!
//! Strings returned through `out` parameters are owned by the caller and must
//! be released with `ctx_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ctxbroker::broker::{BrokerError, PullTarget};
use ctxbroker::qoc::{ContextSample, IndicatorCatalog, RequirementProfile, ServiceOffer, TopicId};
use ctxbroker::selection::build_decision_matrix;
use ctxbroker::{Broker, ErrorCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Opaque broker handle.
pub struct CtxBroker {
    inner: Broker,
}

/// Result of every call. The first nine mirror the broker's error codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtxStatus {
    Ok = 0,
    BadRequest = 1,
    NotFound = 2,
    Conflict = 3,
    Unregistered = 4,
    NotSubscribed = 5,
    NoProvider = 6,
    NoValueYet = 7,
    UpstreamUnavailable = 8,
    NullPointer = 100,
    InvalidUtf8 = 101,
    InvalidJson = 102,
    Panic = 103,
}

impl From<ErrorCode> for CtxStatus {
    fn from(code: ErrorCode) -> Self {
        match code {
            ErrorCode::BadRequest => CtxStatus::BadRequest,
            ErrorCode::NotFound => CtxStatus::NotFound,
            ErrorCode::Conflict => CtxStatus::Conflict,
            ErrorCode::Unregistered => CtxStatus::Unregistered,
            ErrorCode::NotSubscribed => CtxStatus::NotSubscribed,
            ErrorCode::NoProvider => CtxStatus::NoProvider,
            ErrorCode::NoValueYet => CtxStatus::NoValueYet,
            ErrorCode::UpstreamUnavailable => CtxStatus::UpstreamUnavailable,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: CtxStatus,
    message: String,
}

impl Failure {
    fn new(status: CtxStatus, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }
}

impl From<BrokerError> for Failure {
    fn from(e: BrokerError) -> Self {
        let mut message = e.to_string();
        if let Some(topics) = e.advisory_topics() {
            let names: Vec<&str> = topics.iter().map(TopicId::as_str).collect();
            message = format!("{message} [topics: {}]", names.join(","));
        }
        Failure::new(e.code().into(), message)
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            CtxStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("panic inside ctxbroker".to_string());
            CtxStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(CtxStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(CtxStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn json_arg<T: DeserializeOwned>(p: *const c_char, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text(p, what)?).map_err(|e| Failure::new(CtxStatus::InvalidJson, format!("{what}: {e}")))
}

unsafe fn topic_arg(p: *const c_char) -> Result<TopicId, Failure> {
    TopicId::new(text(p, "topic")?).map_err(|e| Failure::new(CtxStatus::BadRequest, format!("topic: {e}")))
}

unsafe fn handle<'a>(b: *mut CtxBroker) -> Result<&'a mut Broker, Failure> {
    b.as_mut()
        .map(|h| &mut h.inner)
        .ok_or_else(|| Failure::new(CtxStatus::NullPointer, "broker handle is null"))
}

unsafe fn put_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(CtxStatus::NullPointer, "out is null"));
    }
    let c = CString::new(value).map_err(|e| Failure::new(CtxStatus::InvalidUtf8, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_json(out: *mut *mut c_char, value: &impl Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string(value).map_err(|e| Failure::new(CtxStatus::InvalidJson, e.to_string()))?;
    put_string(out, s)
}

/// Creates a broker for the given indicator catalog (JSON). Returns NULL on
/// error; see `ctx_last_error_message`.
///
/// # Safety
/// `catalog_json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_new(catalog_json: *const c_char) -> *mut CtxBroker {
    let mut out = ptr::null_mut();
    guard(|| {
        let catalog: IndicatorCatalog = json_arg(catalog_json, "catalog")?;
        catalog
            .validate()
            .map_err(|e| Failure::new(CtxStatus::BadRequest, format!("catalog: {e}")))?;
        out = Box::into_raw(Box::new(CtxBroker { inner: Broker::new(catalog) }));
        Ok(())
    });
    out
}

/// # Safety
/// `broker` must come from `ctx_broker_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_free(broker: *mut CtxBroker) {
    if !broker.is_null() {
        drop(Box::from_raw(broker));
    }
}

/// # Safety
/// Pointer arguments must be valid; `out_subscription_id` receives a string
/// to free with `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_subscribe(
    broker: *mut CtxBroker,
    consumer_id: *const c_char,
    profile_json: *const c_char,
    callback_address: *const c_char,
    out_subscription_id: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        let profile: RequirementProfile = json_arg(profile_json, "profile")?;
        let id = b.subscribe(text(consumer_id, "consumer_id")?, profile, text(callback_address, "callback_address")?)?;
        put_string(out_subscription_id, id)
    })
}

/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_unsubscribe(broker: *mut CtxBroker, subscription_id: *const c_char) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        Ok(b.unsubscribe(text(subscription_id, "subscription_id")?)?)
    })
}

/// # Safety
/// Pointer arguments must be valid; `out_registration_id` receives a string
/// to free with `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_register(
    broker: *mut CtxBroker,
    offer_json: *const c_char,
    service_address: *const c_char,
    out_registration_id: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        let offer: ServiceOffer = json_arg(offer_json, "offer")?;
        let id = b.register_context_service(offer, text(service_address, "service_address")?)?;
        put_string(out_registration_id, id)
    })
}

/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_deregister(broker: *mut CtxBroker, registration_id: *const c_char) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        Ok(b.deregister_context_service(text(registration_id, "registration_id")?)?)
    })
}

/// Publishes a sample from a registered service. Resulting notifications
/// are queued; collect them with `ctx_broker_drain_outbox`.
///
/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_notify(
    broker: *mut CtxBroker,
    service_id: *const c_char,
    sample_json: *const c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        let sample: ContextSample = json_arg(sample_json, "sample")?;
        Ok(b.notify_context_change(text(service_id, "service_id")?, sample)?)
    })
}

/// Resolves which service to pull for a subscription's topic. The caller
/// fetches the sample itself and hands it back via `ctx_broker_accept_pulled`.
///
/// # Safety
/// Pointer arguments must be valid; `out_target_json` must be freed with
/// `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_pull_target(
    broker: *mut CtxBroker,
    subscription_id: *const c_char,
    topic: *const c_char,
    out_target_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        let target = b.resolve_pull(text(subscription_id, "subscription_id")?, &topic_arg(topic)?)?;
        put_json(out_target_json, &target)
    })
}

/// # Safety
/// Pointer arguments must be valid; `out_sample_json` must be freed with
/// `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_accept_pulled(
    broker: *mut CtxBroker,
    target_json: *const c_char,
    sample_json: *const c_char,
    out_sample_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        let target: PullTarget = json_arg(target_json, "target")?;
        let sample: ContextSample = json_arg(sample_json, "sample")?;
        let accepted = b.accept_pulled(&target, sample)?;
        put_json(out_sample_json, &accepted)
    })
}

/// # Safety
/// Pointer arguments must be valid; `out_sample_json` must be freed with
/// `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_get_last(
    broker: *mut CtxBroker,
    subscription_id: *const c_char,
    topic: *const c_char,
    out_sample_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        let sample = b.get_last_topic_value(text(subscription_id, "subscription_id")?, &topic_arg(topic)?)?;
        put_json(out_sample_json, &sample)
    })
}

/// Current decision matrix and its revision for a subscription.
///
/// # Safety
/// Pointer arguments must be valid; `out_json` must be freed with
/// `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_decision(
    broker: *mut CtxBroker,
    subscription_id: *const c_char,
    out_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        let state = b.selection(text(subscription_id, "subscription_id")?)?;
        put_json(out_json, state)
    })
}

/// JSON array of service ids offering `topic`.
///
/// # Safety
/// Pointer arguments must be valid; `out_json` must be freed with
/// `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_find_services(
    broker: *mut CtxBroker,
    topic: *const c_char,
    out_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        put_json(out_json, &b.find_context_services(&topic_arg(topic)?))
    })
}

/// JSON array of subscription ids interested in `topic`.
///
/// # Safety
/// Pointer arguments must be valid; `out_json` must be freed with
/// `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_find_consumers(
    broker: *mut CtxBroker,
    topic: *const c_char,
    out_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        put_json(out_json, &b.find_context_consumers(&topic_arg(topic)?))
    })
}

/// Takes every queued notification and advisory as a JSON array of
/// `{subscription_id, callback_address, message}` objects.
///
/// # Safety
/// Pointer arguments must be valid; `out_json` must be freed with
/// `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_broker_drain_outbox(broker: *mut CtxBroker, out_json: *mut *mut c_char) -> CtxStatus {
    guard(|| {
        let b = handle(broker)?;
        b.take_events();
        put_json(out_json, &b.take_dispatches())
    })
}

/// Stateless scoring: the decision matrix for a profile against a JSON array
/// of offers.
///
/// # Safety
/// Pointer arguments must be valid; `out_json` must be freed with
/// `ctx_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ctx_score(
    profile_json: *const c_char,
    offers_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let profile: RequirementProfile = json_arg(profile_json, "profile")?;
        let offers: Vec<ServiceOffer> = json_arg(offers_json, "offers")?;
        let decision =
            build_decision_matrix(&offers, &profile).map_err(|e| Failure::new(CtxStatus::BadRequest, e.to_string()))?;
        put_json(out_json, &decision)
    })
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn ctx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ctx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
