#ifndef TRUSSLOOP_H
#define TRUSSLOOP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_ARGUMENT = 1,
  TL_STATUS_INVALID_UTF8 = 2,
  TL_STATUS_INVALID_JSON = 3,
  TL_STATUS_UNKNOWN_BENCHMARK = 4,
  TL_STATUS_PARSE_FAILED = 5,
  // The score has no analysis: the design was invalid or a mechanism.
  TL_STATUS_NOT_ANALYSED = 6,
  TL_STATUS_PROMPT = 7,
  TL_STATUS_PANIC = 8,
} TlStatus;

// Nodes and members of a candidate truss.
typedef struct TlDesign TlDesign;

// Load cases, supports, area table and constraints.
typedef struct TlProblem TlProblem;

// An evaluated design.
typedef struct TlScore TlScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or NULL. Valid until the
// next call into this library from the same thread.
const char *tl_last_error_message(void);

// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum TlStatus tl_problem_from_json(const char *json, struct TlProblem **out);

// One of the built-in problems, `task1_v1` through `task2_v3`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum TlStatus tl_problem_benchmark(const char *name, struct TlProblem **out);

// # Safety
// `problem` must come from this library and not be freed twice.
void tl_problem_free(struct TlProblem *problem);

// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum TlStatus tl_design_from_json(const char *json, struct TlDesign **out);

// Extract the design from free-form proposer text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum TlStatus tl_parse_response(const char *text, struct TlDesign **out);

// Number of nodes and members in a design.
//
// # Safety
// All pointers must be valid.
enum TlStatus tl_design_counts(const struct TlDesign *design, size_t *nodes, size_t *members);

// # Safety
// `design` must come from this library and not be freed twice.
void tl_design_free(struct TlDesign *design);

// Validate, solve and check a design. Invalid designs and mechanisms still
// yield a score; their getters report [`TlStatus::NotAnalysed`].
//
// # Safety
// All pointers must be valid.
enum TlStatus tl_evaluate(const struct TlProblem *problem,
                          const struct TlDesign *design,
                          struct TlScore **out);

// # Safety
// All pointers must be valid.
enum TlStatus tl_score_feasible(const struct TlScore *score, bool *out);

// # Safety
// All pointers must be valid.
enum TlStatus tl_score_total_mass(const struct TlScore *score, double *out);

// # Safety
// All pointers must be valid.
enum TlStatus tl_score_max_abs_stress(const struct TlScore *score, double *out);

// Full score as JSON.
//
// # Safety
// All pointers must be valid.
enum TlStatus tl_score_to_json(const struct TlScore *score, char **out);

// # Safety
// `score` must come from this library and not be freed twice.
void tl_score_free(struct TlScore *score);

// # Safety
// All pointers must be valid.
enum TlStatus tl_render_initial_prompt(const struct TlProblem *problem, char **out);

// Feedback prompt describing `score` as the latest attempt.
//
// # Safety
// All pointers must be valid.
enum TlStatus tl_render_feedback_prompt(const struct TlProblem *problem,
                                        const struct TlScore *score,
                                        char **out);

// # Safety
// `s` must come from this library and not be freed twice.
void tl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRUSSLOOP_H */
