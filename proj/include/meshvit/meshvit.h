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

/* meshvit public C API.
 *
 * The library is driven through an opaque run-spec handle holding a flat
 * key = value configuration (see docs in the README for the key list and the
 * config-file grammar). Every command returns a status code:
 *
 *   MV_OK            0  success
 *   MV_VERIFY_FAILED 1  a verification property failed
 *   MV_CONFIG_ERROR  2  invalid configuration or usage
 *   MV_DIVERGED      3  training produced a non-finite loss
 *
 * Reports are heap strings owned by the library; free them with
 * mv_string_free. mv_last_error returns a thread-local message for the most
 * recent failing call.
 */
#ifndef MESHVIT_MESHVIT_H_
#define MESHVIT_MESHVIT_H_

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mv_status {
  MV_OK = 0,
  MV_VERIFY_FAILED = 1,
  MV_CONFIG_ERROR = 2,
  MV_DIVERGED = 3
} mv_status;

typedef struct mv_runspec mv_runspec;

const char* mv_version(void);

mv_runspec* mv_runspec_new(void);
void mv_runspec_free(mv_runspec* rs);

/* Loads `key = value` lines ('#' comments); later mv_runspec_set calls
 * override file values. */
mv_status mv_runspec_load_file(mv_runspec* rs, const char* path);
mv_status mv_runspec_set(mv_runspec* rs, const char* key, const char* value);

/* Architecture + cost report for a preset or explicit dimensions. */
mv_status mv_cmd_inspect(const mv_runspec* rs, char** report);

/* Module property suites; scope is all|tensor|model|shard|mesh. */
mv_status mv_cmd_verify(const mv_runspec* rs, const char* scope, char** report);

/* Writes plan.csv, timeline.csv, summary.txt, manifest.txt into out_dir. */
mv_status mv_cmd_simulate(const mv_runspec* rs, const char* out_dir, char** report);

/* Writes telemetry.csv, checkpoint.{json,bin}, manifest.txt into out_dir.
 * ablate != 0 runs the paired QK-normalization ablation instead. */
mv_status mv_cmd_train(const mv_runspec* rs, const char* out_dir, int ablate,
                       char** report);

/* Writes schedule.csv (step, lr rows) into out_dir. */
mv_status mv_cmd_schedule(const mv_runspec* rs, const char* out_dir, char** report);

void mv_string_free(char* s);
const char* mv_last_error(void);

#ifdef __cplusplus
}
#endif

#endif /* MESHVIT_MESHVIT_H_ */
