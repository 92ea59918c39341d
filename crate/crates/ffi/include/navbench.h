#ifndef NAVBENCH_H
#define NAVBENCH_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum NbStatus {
  NB_STATUS_OK = 0,
  NB_STATUS_NULL_ARGUMENT = 1,
  NB_STATUS_INVALID_UTF8 = 2,
  /*
   Input text or document did not parse.
   */
  NB_STATUS_PARSE_ERROR = 3,
  /*
   A file or directory could not be loaded.
   */
  NB_STATUS_LOAD_ERROR = 4,
  NB_STATUS_NOT_FOUND = 5,
  NB_STATUS_INVALID_ARGUMENT = 6,
  /*
   An internal panic was caught at the boundary.
   */
  NB_STATUS_PANIC = 7,
} NbStatus;

/*
 Text observation modes.
 */
typedef enum NbTextMode {
  NB_TEXT_MODE_A11Y_FULL = 0,
  NB_TEXT_MODE_A11Y_SIMPLIFIED = 1,
} NbTextMode;

/*
 Opaque parsed UI screen.
 */
typedef struct NbScreen NbScreen;

/*
 Opaque loaded benchmark suite.
 */
typedef struct NbSuite NbSuite;

typedef struct NbSatisfaction {
  uint32_t satisfied;
  uint32_t total;
  bool pass;
} NbSatisfaction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version; a static string that must not be freed.
 */
const char *nb_version(void);

/*
 Message for the last failed call on this thread, or NULL. Free the result
 with `nb_string_free`.
 */
char *nb_last_error(void);

/*
 # Safety
 `s` is NULL or a string returned by this library and not yet freed.
 */
void nb_string_free(char *s);

/*
 Parse a screen document.

 # Safety
 `json` is a NUL-terminated string; `out` is valid for one write.
 */
enum NbStatus nb_screen_from_json(const char *json, struct NbScreen **out);

/*
 # Safety
 `screen` is NULL or a handle from `nb_screen_from_json` not yet freed.
 */
void nb_screen_free(struct NbScreen *screen);

/*
 Text observation of a screen.

 # Safety
 `screen` is a live handle; `out` is valid for one write.
 */
enum NbStatus nb_screen_observation(const struct NbScreen *screen,
                                    enum NbTextMode mode,
                                    char **out);

/*
 # Safety
 `screen` is a live handle; `out` is valid for one write.
 */
enum NbStatus nb_screen_interactable_count(const struct NbScreen *screen, size_t *out);

/*
 Structural fingerprint (64 hex characters).

 # Safety
 `screen` is a live handle; `out` is valid for one write.
 */
enum NbStatus nb_screen_fingerprint(const struct NbScreen *screen, char **out);

/*
 Index of the innermost interactable element at `(x, y)`, or -1.

 # Safety
 `screen` is a live handle; `out` is valid for one write.
 */
enum NbStatus nb_screen_hit_test(const struct NbScreen *screen, int64_t x, int64_t y, int64_t *out);

/*
 Canonical rendering of an action line. A malformed line yields
 `ParseError` and a message starting with the failure reason.

 # Safety
 `line` is a NUL-terminated string; `out` is valid for one write.
 */
enum NbStatus nb_action_canonical(const char *line, char **out);

/*
 Replay key of an action performed on a screen.

 # Safety
 `screen` is a live handle; `line` is a NUL-terminated string; `out` is
 valid for one write.
 */
enum NbStatus nb_action_key(const struct NbScreen *screen, const char *line, char **out);

/*
 Load a suite directory.

 # Safety
 `root` is a NUL-terminated path; `out` is valid for one write.
 */
enum NbStatus nb_suite_load(const char *root, struct NbSuite **out);

/*
 # Safety
 `suite` is NULL or a handle from `nb_suite_load` not yet freed.
 */
void nb_suite_free(struct NbSuite *suite);

/*
 # Safety
 `suite` is a live handle; `out` is valid for one write.
 */
enum NbStatus nb_suite_task_count(const struct NbSuite *suite, size_t *out);

/*
 Id of the task at `index`.

 # Safety
 `suite` is a live handle; `out` is valid for one write.
 */
enum NbStatus nb_suite_task_id(const struct NbSuite *suite, size_t index, char **out);

/*
 Judge a stored trajectory (JSON lines text) against a task's evaluators.

 # Safety
 `suite` is a live handle; `task_id` and `trajectory` are NUL-terminated
 strings; `out` is valid for one write.
 */
enum NbStatus nb_suite_check_trajectory(const struct NbSuite *suite,
                                        const char *task_id,
                                        const char *trajectory,
                                        struct NbSatisfaction *out);

/*
 Score a run directory and return the report as JSON. Nothing is written.

 # Safety
 `suite` is a live handle; `run_dir` is a NUL-terminated path; `out` is
 valid for one write.
 */
enum NbStatus nb_suite_score_run(const struct NbSuite *suite, const char *run_dir, char **out);

/*
 Suite lints, one `subject: message` per line; empty when clean.

 # Safety
 `suite` is a live handle; `out` is valid for one write.
 */
enum NbStatus nb_suite_lint(const struct NbSuite *suite, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NAVBENCH_H */
