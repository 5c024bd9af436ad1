#ifndef MFLIMITS_H
#define MFLIMITS_H

/* C interface to the mflimits library.
 *
 * A session owns an experiment configuration and caches every computed
 * stage. Functions return an mfl_status; on failure the message is available
 * from mfl_session_last_error. Strings returned by the library stay valid
 * until the next call on the same session. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MFL_API __declspec(dllexport)
#else
#define MFL_API __attribute__((visibility("default")))
#endif

typedef enum mfl_status {
  MFL_OK = 0,
  MFL_INVARIANT = 1, /* a computed object violates a stated invariant */
  MFL_CONFIG = 2,    /* bad configuration or arguments */
  MFL_SOLVER = 3,    /* an iterative method did not converge */
  MFL_IO = 4,        /* file system failure */
  MFL_STOPPED = 5,   /* the instance is degenerate for this stage (empty payoff band) */
  MFL_INTERNAL = 6
} mfl_status;

typedef struct mfl_session mfl_session;

typedef void (*mfl_log_fn)(const char* message, void* user);

MFL_API const char* mfl_version(void);
MFL_API const char* mfl_status_name(mfl_status status);

/* preset: "paper-instance", "flat" or NULL for the default. */
MFL_API mfl_status mfl_session_create(const char* preset, mfl_session** out);
MFL_API mfl_status mfl_session_create_from_text(const char* config_text, mfl_session** out);
MFL_API mfl_status mfl_session_create_from_file(const char* path, mfl_session** out);
MFL_API void mfl_session_destroy(mfl_session* session);

/* Changing a key discards every cached stage. */
MFL_API mfl_status mfl_session_set(mfl_session* session, const char* key, const char* value);
MFL_API void mfl_session_set_logger(mfl_session* session, mfl_log_fn fn, void* user);

MFL_API const char* mfl_session_last_error(const mfl_session* session);
/* JSON of the last successful run call. */
MFL_API const char* mfl_session_result_json(const mfl_session* session);
/* Resolved value of one configuration key ("" if unknown). */
MFL_API const char* mfl_session_get(mfl_session* session, const char* key);
/* Fully resolved `key = value` configuration. */
MFL_API const char* mfl_session_config_text(mfl_session* session);

/* stage: mfg, planner, penalized, target, calibrate, simulate, deviate, sweep. */
MFL_API mfl_status mfl_run_stage(mfl_session* session, const char* stage);
MFL_API mfl_status mfl_run_mfg(mfl_session* session);
MFL_API mfl_status mfl_run_planner(mfl_session* session);
MFL_API mfl_status mfl_run_penalized(mfl_session* session);
MFL_API mfl_status mfl_run_target(mfl_session* session);
MFL_API mfl_status mfl_run_calibrate(mfl_session* session);
MFL_API mfl_status mfl_run_simulate(mfl_session* session);
MFL_API mfl_status mfl_run_deviate(mfl_session* session);
MFL_API mfl_status mfl_run_sweep(mfl_session* session);

/* Writes the artifacts of a computed (or computable) stage into dir. */
MFL_API mfl_status mfl_write_stage(mfl_session* session, const char* stage, const char* dir);

/* Full pipeline into the configured output_dir; the result JSON holds the
 * status, stage list and manifest. A degenerate instance returns MFL_OK with
 * a "stopped" status. */
MFL_API mfl_status mfl_run_pipeline(mfl_session* session);

/* Re-hashes the files listed in dir/manifest.json; *n_bad receives the
 * number of missing or modified files. */
MFL_API mfl_status mfl_verify_manifest(const char* dir, int* n_bad);

/* Runs the built-in checks. *pass is 1 when all pass; *summary stays valid
 * until the next mfl_selftest call on the same thread. */
MFL_API mfl_status mfl_selftest(double hjb_tolerance, int* pass, const char** summary);

MFL_API double mfl_project_to_torus(double x);
/* W1 on the circle between two densities on the same n-cell grid (each
 * integrating to 1 with cell width 1/n). */
MFL_API mfl_status mfl_wasserstein1_circle(const double* mu, const double* nu, int n, double* out);

#ifdef __cplusplus
}
#endif

#endif
