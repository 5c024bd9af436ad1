/* Exercises the C interface from plain C. */

#include <math.h>
#include <stdio.h>
#include <string.h>

#include "mflimits/mflimits.h"

static int failures = 0;

#define EXPECT(cond)                                              \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                 \
    }                                                             \
  } while (0)

static int log_calls = 0;
static void on_log(const char* msg, void* user) {
  (void)msg;
  ++*(int*)user;
}

int main(void) {
  mfl_session* s = NULL;
  EXPECT(mfl_session_create(NULL, &s) == MFL_OK);
  EXPECT(s != NULL);
  EXPECT(strcmp(mfl_session_get(s, "n_cells"), "256") == 0);

  EXPECT(mfl_session_set(s, "n_cells", "64") == MFL_OK);
  EXPECT(strcmp(mfl_session_get(s, "n_cells"), "64") == 0);
  EXPECT(mfl_session_set(s, "no_such_key", "1") == MFL_CONFIG);
  EXPECT(strlen(mfl_session_last_error(s)) > 0);
  EXPECT(mfl_session_set(s, "n_cells", "3") == MFL_CONFIG);
  EXPECT(strcmp(mfl_session_get(s, "n_cells"), "64") == 0);

  mfl_session_set_logger(s, on_log, &log_calls);
  EXPECT(mfl_run_mfg(s) == MFL_OK);
  EXPECT(strstr(mfl_session_result_json(s), "\"lambda0\"") != NULL);
  EXPECT(strstr(mfl_session_config_text(s), "n_cells = 64") != NULL);
  EXPECT(mfl_run_stage(s, "nonsense") == MFL_CONFIG);
  mfl_session_destroy(s);

  EXPECT(mfl_session_create("flat", &s) == MFL_OK);
  EXPECT(mfl_session_set(s, "n_cells", "32") == MFL_OK);
  EXPECT(mfl_run_target(s) == MFL_STOPPED);
  EXPECT(strcmp(mfl_status_name(MFL_STOPPED), "stopped") == 0);
  mfl_session_destroy(s);

  EXPECT(mfl_session_create("unknown-preset", &s) == MFL_CONFIG);
  EXPECT(s == NULL);
  EXPECT(mfl_session_create_from_text("N = 8\nn_cells = 32\n", &s) == MFL_OK);
  EXPECT(strcmp(mfl_session_get(s, "N"), "8") == 0);
  mfl_session_destroy(s);
  EXPECT(mfl_session_create_from_file("/nonexistent/config.txt", &s) == MFL_IO);

  EXPECT(fabs(mfl_project_to_torus(-0.25) - 0.75) < 1e-15);
  EXPECT(fabs(mfl_project_to_torus(3.5) - 0.5) < 1e-15);

  {
    double a[8], b[8], w = -1.0;
    int i;
    for (i = 0; i < 8; ++i) {
      a[i] = 0.0;
      b[i] = 0.0;
    }
    a[0] = 8.0; /* point masses at cells 0 and 4: half a turn apart */
    b[4] = 8.0;
    EXPECT(mfl_wasserstein1_circle(a, b, 8, &w) == MFL_OK);
    EXPECT(fabs(w - 0.5) < 1e-12);
    b[4] = 1.0;
    EXPECT(mfl_wasserstein1_circle(a, b, 8, &w) == MFL_INVARIANT);
  }

  {
    int n_bad = 0;
    EXPECT(mfl_verify_manifest("/nonexistent", &n_bad) == MFL_IO);
  }

  printf("capi_smoke: %s (version %s)\n", failures ? "FAILED" : "ok", mfl_version());
  return failures ? 1 : 0;
}
