#ifndef CTXBROKER_H
#define CTXBROKER_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call. The first nine mirror the broker's error codes.
typedef enum CtxStatus {
  CTX_STATUS_OK = 0,
  CTX_STATUS_BAD_REQUEST = 1,
  CTX_STATUS_NOT_FOUND = 2,
  CTX_STATUS_CONFLICT = 3,
  CTX_STATUS_UNREGISTERED = 4,
  CTX_STATUS_NOT_SUBSCRIBED = 5,
  CTX_STATUS_NO_PROVIDER = 6,
  CTX_STATUS_NO_VALUE_YET = 7,
  CTX_STATUS_UPSTREAM_UNAVAILABLE = 8,
  CTX_STATUS_NULL_POINTER = 100,
  CTX_STATUS_INVALID_UTF8 = 101,
  CTX_STATUS_INVALID_JSON = 102,
  CTX_STATUS_PANIC = 103,
} CtxStatus;

// Opaque broker handle.
typedef struct CtxBroker CtxBroker;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a broker for the given indicator catalog (JSON). Returns NULL on
// error; see `ctx_last_error_message`.
//
// # Safety
// `catalog_json` must be a valid NUL-terminated string.
struct CtxBroker *ctx_broker_new(const char *catalog_json);

// # Safety
// `broker` must come from `ctx_broker_new` and not be used afterwards.
void ctx_broker_free(struct CtxBroker *broker);

// # Safety
// Pointer arguments must be valid; `out_subscription_id` receives a string
// to free with `ctx_string_free`.
enum CtxStatus ctx_broker_subscribe(struct CtxBroker *broker,
                                    const char *consumer_id,
                                    const char *profile_json,
                                    const char *callback_address,
                                    char **out_subscription_id);

// # Safety
// Pointer arguments must be valid.
enum CtxStatus ctx_broker_unsubscribe(struct CtxBroker *broker, const char *subscription_id);

// # Safety
// Pointer arguments must be valid; `out_registration_id` receives a string
// to free with `ctx_string_free`.
enum CtxStatus ctx_broker_register(struct CtxBroker *broker,
                                   const char *offer_json,
                                   const char *service_address,
                                   char **out_registration_id);

// # Safety
// Pointer arguments must be valid.
enum CtxStatus ctx_broker_deregister(struct CtxBroker *broker, const char *registration_id);

// Publishes a sample from a registered service. Resulting notifications
// are queued; collect them with `ctx_broker_drain_outbox`.
//
// # Safety
// Pointer arguments must be valid.
enum CtxStatus ctx_broker_notify(struct CtxBroker *broker,
                                 const char *service_id,
                                 const char *sample_json);

// Resolves which service to pull for a subscription's topic. The caller
// fetches the sample itself and hands it back via `ctx_broker_accept_pulled`.
//
// # Safety
// Pointer arguments must be valid; `out_target_json` must be freed with
// `ctx_string_free`.
enum CtxStatus ctx_broker_pull_target(struct CtxBroker *broker,
                                      const char *subscription_id,
                                      const char *topic,
                                      char **out_target_json);

// # Safety
// Pointer arguments must be valid; `out_sample_json` must be freed with
// `ctx_string_free`.
enum CtxStatus ctx_broker_accept_pulled(struct CtxBroker *broker,
                                        const char *target_json,
                                        const char *sample_json,
                                        char **out_sample_json);

// # Safety
// Pointer arguments must be valid; `out_sample_json` must be freed with
// `ctx_string_free`.
enum CtxStatus ctx_broker_get_last(struct CtxBroker *broker,
                                   const char *subscription_id,
                                   const char *topic,
                                   char **out_sample_json);

// Current decision matrix and its revision for a subscription.
//
// # Safety
// Pointer arguments must be valid; `out_json` must be freed with
// `ctx_string_free`.
enum CtxStatus ctx_broker_decision(struct CtxBroker *broker,
                                   const char *subscription_id,
                                   char **out_json);

// JSON array of service ids offering `topic`.
//
// # Safety
// Pointer arguments must be valid; `out_json` must be freed with
// `ctx_string_free`.
enum CtxStatus ctx_broker_find_services(struct CtxBroker *broker,
                                        const char *topic,
                                        char **out_json);

// JSON array of subscription ids interested in `topic`.
//
// # Safety
// Pointer arguments must be valid; `out_json` must be freed with
// `ctx_string_free`.
enum CtxStatus ctx_broker_find_consumers(struct CtxBroker *broker,
                                         const char *topic,
                                         char **out_json);

// Takes every queued notification and advisory as a JSON array of
// `{subscription_id, callback_address, message}` objects.
//
// # Safety
// Pointer arguments must be valid; `out_json` must be freed with
// `ctx_string_free`.
enum CtxStatus ctx_broker_drain_outbox(struct CtxBroker *broker, char **out_json);

// Stateless scoring: the decision matrix for a profile against a JSON array
// of offers.
//
// # Safety
// Pointer arguments must be valid; `out_json` must be freed with
// `ctx_string_free`.
enum CtxStatus ctx_score(const char *profile_json, const char *offers_json, char **out_json);

// Message for the last failed call on this thread, or NULL after a
// successful call. Valid until the next call on the same thread; do not free.
const char *ctx_last_error_message(void);

// # Safety
// `s` must be NULL or a string returned by this library, freed once.
void ctx_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTXBROKER_H */
