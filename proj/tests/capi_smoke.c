/* Copyright 2026 The meshvit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/* Plain-C consumer of the shared library: exercises the opaque-handle API
 * exactly the way an external binding would. */

#include <stdio.h>
#include <string.h>

#include "meshvit/meshvit.h"

static int failures = 0;

#define EXPECT(cond, what)                                  \
  do {                                                      \
    if (!(cond)) {                                          \
      fprintf(stderr, "FAIL: %s (%s)\n", what, #cond);      \
      failures++;                                           \
    }                                                       \
  } while (0)

int main(void) {
  EXPECT(strstr(mv_version(), "meshvit") != NULL, "version string");

  /* Null-argument handling: errors, never crashes. */
  EXPECT(mv_runspec_set(NULL, "seed", "1") == MV_CONFIG_ERROR, "null handle");
  EXPECT(mv_cmd_inspect(NULL, NULL) == MV_CONFIG_ERROR, "null inspect");

  mv_runspec* rs = mv_runspec_new();
  EXPECT(rs != NULL, "allocation");
  EXPECT(mv_runspec_set(rs, "preset", "vit_22b") == MV_OK, "set preset");
  EXPECT(mv_runspec_set(rs, "definitely_not_a_key", "1") == MV_CONFIG_ERROR,
         "unknown key rejected");
  EXPECT(strlen(mv_last_error()) > 0, "error message populated");

  char* report = NULL;
  EXPECT(mv_cmd_inspect(rs, &report) == MV_OK, "inspect status");
  EXPECT(report != NULL && strstr(report, "params_body = 21750822912") != NULL,
         "inspect body count");
  EXPECT(strstr(report, "PASS(2%)") != NULL, "table verdict");
  mv_string_free(report);

  /* Determinism through the C surface. */
  char* again = NULL;
  char* first = NULL;
  mv_cmd_inspect(rs, &first);
  mv_cmd_inspect(rs, &again);
  EXPECT(first && again && strcmp(first, again) == 0, "byte-identical reports");
  mv_string_free(first);
  mv_string_free(again);

  /* A bad preset surfaces as a config error with a message. */
  mv_runspec* bad = mv_runspec_new();
  mv_runspec_set(bad, "preset", "vit_22b");
  EXPECT(mv_runspec_load_file(bad, "/no/such/config.file") == MV_CONFIG_ERROR,
         "missing config file");
  mv_runspec_free(bad);

  /* Scoped verification through the shared library. */
  char* vreport = NULL;
  EXPECT(mv_cmd_verify(rs, "tensor", &vreport) == MV_OK, "verify tensor scope");
  EXPECT(vreport && strstr(vreport, "check,tensor,") != NULL, "verify lines");
  EXPECT(vreport && strstr(vreport, "FAIL") == NULL, "verify green");
  mv_string_free(vreport);
  EXPECT(mv_cmd_verify(rs, "nonsense", &vreport) == MV_CONFIG_ERROR, "bad scope");
  mv_string_free(vreport);

  mv_runspec_free(rs);
  mv_runspec_free(NULL); /* must be a no-op */

  if (failures == 0) printf("capi_smoke: all checks passed\n");
  return failures == 0 ? 0 : 1;
}
