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
#include "meshvit/meshvit.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "commands.hpp"
#include "runspec.hpp"

struct mv_runspec {
  meshvit::runspec::RunSpec spec;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mv_status status_of(int code) {
  switch (code) {
    case 0: return MV_OK;
    case 1: return MV_VERIFY_FAILED;
    case 3: return MV_DIVERGED;
    default: return MV_CONFIG_ERROR;
  }
}

mv_status finish(const meshvit::commands::CommandResult& r, char** report) {
  if (report) *report = dup_string(r.report);
  if (r.status != 0) g_last_error = r.report;
  return status_of(r.status);
}

template <typename Fn>
mv_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const meshvit::Error& e) {
    g_last_error = e.what();
    return e.kind() == meshvit::ErrorKind::divergence ? MV_DIVERGED : MV_CONFIG_ERROR;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MV_CONFIG_ERROR;
  }
}

}  // namespace

extern "C" {

const char* mv_version(void) { return "meshvit 1.0.0"; }

mv_runspec* mv_runspec_new(void) { return new (std::nothrow) mv_runspec(); }

void mv_runspec_free(mv_runspec* rs) { delete rs; }

mv_status mv_runspec_load_file(mv_runspec* rs, const char* path) {
  if (!rs || !path) {
    g_last_error = "null argument";
    return MV_CONFIG_ERROR;
  }
  return guarded([&]() {
    meshvit::runspec::RunSpec loaded = meshvit::runspec::parse_file(path);
    // Flag overrides applied before the file keep precedence.
    for (const auto& [k, v] : rs->spec.values) loaded.values[k] = v;
    rs->spec.values.swap(loaded.values);
    rs->spec.file_text = std::move(loaded.file_text);
    return MV_OK;
  });
}

mv_status mv_runspec_set(mv_runspec* rs, const char* key, const char* value) {
  if (!rs || !key || !value) {
    g_last_error = "null argument";
    return MV_CONFIG_ERROR;
  }
  return guarded([&]() {
    rs->spec.set(key, value);
    return MV_OK;
  });
}

mv_status mv_cmd_inspect(const mv_runspec* rs, char** report) {
  if (!rs) {
    g_last_error = "null runspec";
    return MV_CONFIG_ERROR;
  }
  return finish(meshvit::commands::inspect(rs->spec), report);
}

mv_status mv_cmd_verify(const mv_runspec* rs, const char* scope, char** report) {
  if (!rs) {
    g_last_error = "null runspec";
    return MV_CONFIG_ERROR;
  }
  return finish(meshvit::commands::verify(rs->spec, scope ? scope : ""), report);
}

mv_status mv_cmd_simulate(const mv_runspec* rs, const char* out_dir, char** report) {
  if (!rs || !out_dir) {
    g_last_error = "null argument";
    return MV_CONFIG_ERROR;
  }
  return finish(meshvit::commands::simulate(rs->spec, out_dir), report);
}

mv_status mv_cmd_train(const mv_runspec* rs, const char* out_dir, int ablate,
                       char** report) {
  if (!rs || !out_dir) {
    g_last_error = "null argument";
    return MV_CONFIG_ERROR;
  }
  return finish(meshvit::commands::train(rs->spec, out_dir, ablate != 0), report);
}

mv_status mv_cmd_schedule(const mv_runspec* rs, const char* out_dir, char** report) {
  if (!rs || !out_dir) {
    g_last_error = "null argument";
    return MV_CONFIG_ERROR;
  }
  return finish(meshvit::commands::schedule(rs->spec, out_dir), report);
}

void mv_string_free(char* s) { std::free(s); }

const char* mv_last_error(void) { return g_last_error.c_str(); }

}  // extern "C"
