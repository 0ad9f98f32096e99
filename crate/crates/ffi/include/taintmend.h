/* C interface to the taintmend analysis primitives. */

#ifndef TAINTMEND_H
#define TAINTMEND_H

/* This file is generated by cbindgen from taintmend-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every `tm_*` function.
 */
typedef enum {
  TM_OK = 0,
  TM_NULL_ARGUMENT = 1,
  TM_INVALID_UTF8 = 2,
  TM_PARSE_ERROR = 3,
  TM_INVARIANT_VIOLATION = 4,
  TM_INTERNAL_ERROR = 5,
} TmStatus;

/**
 * Verdict of `tm_diff_classify`.
 */
typedef enum {
  TM_UNCHANGED = 0,
  TM_SINGLE_HUNK = 1,
  TM_MULTI_HUNK = 2,
} TmHunkClass;

/**
 * Opaque parsed location sequence.
 */
typedef struct TmSequence TmSequence;

/**
 * Opaque parsed taint trace.
 */
typedef struct TmTrace TmTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the most recent failure on this thread. Valid until the
 * next `tm_*` call on the same thread; never NULL.
 */
const char *tm_last_error_message(void);

/**
 * Parses the `{1,[ADD],2,[3]}` notation into a sequence handle.
 */
TmStatus tm_sequence_parse(const char *text, TmSequence **out);

/**
 * Canonical text form of a sequence; release with `tm_string_free`.
 */
TmStatus tm_sequence_canonical(const TmSequence *sequence, char **out);

/**
 * Line count of the anchoring function version.
 */
TmStatus tm_sequence_anchor_length(const TmSequence *sequence, uintptr_t *out);

void tm_sequence_free(TmSequence *sequence);

/**
 * Diffs two function texts and returns the canonical location sequence of
 * the edit against the old version's numbering.
 */
TmStatus tm_diff_sequence(const char *old_text, const char *new_text, char **out);

/**
 * Classifies the edit between two function texts.
 */
TmStatus tm_diff_classify(const char *old_text, const char *new_text, TmHunkClass *out);

/**
 * Parses a trace log (`SOURCE`/`STMT`/`SINK`/`TOTAL` records).
 */
TmStatus tm_trace_parse(const char *log_text, TmTrace **out);

/**
 * Taint statement coverage of a parsed trace, in [0, 1].
 */
TmStatus tm_trace_coverage(const TmTrace *trace, double *out);

/**
 * Writes 1 when the patched trace shows a different CWE type or taint sink
 * than the original (a new vulnerability), 0 otherwise.
 */
TmStatus tm_trace_new_vuln(const TmTrace *original, const TmTrace *patched, int *out);

void tm_trace_free(TmTrace *trace);

/**
 * Releases a string returned through a `char **` out-pointer.
 */
void tm_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAINTMEND_H */
