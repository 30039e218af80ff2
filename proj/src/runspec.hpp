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
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "mesh.hpp"
#include "model.hpp"
#include "trainer.hpp"

namespace meshvit::runspec {

// Flat key-value run configuration.
//
// Grammar: one `key = value` pair per line; blank lines and lines starting
// with '#' are ignored; whitespace around key and value is trimmed; the
// first '=' splits key from value. Unknown keys are config errors. Flag
// overrides (RunSpec::set) take precedence over file values.
struct RunSpec {
  std::map<std::string, std::string> values;
  std::string file_text;  // verbatim config file, empty when none was given

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Effective configuration, one sorted `key = value` per line.
  std::string echo() const;
};

const std::vector<std::string>& known_keys();

RunSpec parse_file(const std::string& path);
RunSpec parse_text(const std::string& text);

// Typed views assembled from the spec with defaults; each validates.
model::VitConfig vit_config(const RunSpec& rs);
mesh::MeshConfig mesh_config(const RunSpec& rs);
trainer::Schedule schedule(const RunSpec& rs);
trainer::TrainConfig train_config(const RunSpec& rs);
trainer::SyntheticTask synthetic_task(const RunSpec& rs, const model::VitConfig& cfg);

// MESHVIT_THREADS caps internal verification parallelism (>= 1).
int64_t thread_cap();

}  // namespace meshvit::runspec
