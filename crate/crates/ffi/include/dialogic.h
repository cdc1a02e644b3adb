#ifndef DIALOGIC_H
#define DIALOGIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum DialogicStatus {
  DIALOGIC_STATUS_OK = 0,
  DIALOGIC_STATUS_NULL_ARGUMENT = 1,
  DIALOGIC_STATUS_INVALID_UTF8 = 2,
  DIALOGIC_STATUS_INVALID_ARGUMENT = 3,
  DIALOGIC_STATUS_CONFIG = 4,
  DIALOGIC_STATUS_INTERNAL = 5,
  DIALOGIC_STATUS_PANIC = 6,
} DialogicStatus;

// Opaque engine handle.
typedef struct DialogicEngine DialogicEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Create an engine with offline mock providers, in-memory storage and the
// bundled fixture book.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum DialogicStatus dialogic_engine_new_offline(struct DialogicEngine **out);

// Create an engine from a TOML configuration file.
//
// # Safety
// `config_path` must be a NUL-terminated string; `out` must be writable.
enum DialogicStatus dialogic_engine_new_from_config(const char *config_path,
                                                    struct DialogicEngine **out);

// Release an engine. Null is ignored.
//
// # Safety
// `engine` must come from a `dialogic_engine_new_*` call and not be freed twice.
void dialogic_engine_free(struct DialogicEngine *engine);

// Dispatch one API request. `target` is the path plus optional query string,
// `body_json` may be null. On success `*out_status` holds the HTTP status and
// `*out_body` a JSON document; binary bodies come back as
// `{"media_type": ..., "data_base64": ...}`.
//
// # Safety
// String arguments must be NUL-terminated; out-pointers must be writable.
enum DialogicStatus dialogic_engine_dispatch(const struct DialogicEngine *engine,
                                             const char *method,
                                             const char *target,
                                             const char *body_json,
                                             uint16_t *out_status,
                                             char **out_body);

// Match a story section against the engine's knowledge base for a child of
// `age_years`. `*out_json` receives an array of matches.
//
// # Safety
// `text` must be NUL-terminated; `out_json` must be writable.
enum DialogicStatus dialogic_engine_match(const struct DialogicEngine *engine,
                                          const char *text,
                                          uint8_t age_years,
                                          char **out_json);

// Grade rank (0 = Kindergarten .. 5 = Fifth Grade) for an age in years.
//
// # Safety
// `out_rank` must be writable.
enum DialogicStatus dialogic_grade_for_age(uint8_t age_years, uint8_t *out_rank);

// Parse move tags out of a generated turn; `*out_json` receives the parsed
// turn as JSON.
//
// # Safety
// `raw_turn` must be NUL-terminated; `out_json` must be writable.
enum DialogicStatus dialogic_parse_move_tags(const char *raw_turn, char **out_json);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call on the same thread; do not free it.
const char *dialogic_last_error(void);

// Library version as a static string.
const char *dialogic_version(void);

// Free a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void dialogic_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIALOGIC_H */
