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
#include "runspec.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace meshvit::runspec {

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "preset", "width", "depth", "mlp", "heads", "patch", "image", "channels",
      "classes", "qk_norm", "parallel_block",
      "mesh.t", "mesh.k", "mesh.bandwidth", "mesh.device_flops", "mesh.bytes_per_float",
      "tokens_per_sec", "peak_flops",
      "shard.threshold",
      "sched.peak_lr", "sched.warmup", "sched.cooldown", "sched.total", "sched.stride",
      "train.steps", "train.batch", "train.wd_head", "train.wd_body",
      "train.execution", "train.k",
      "task.noise",
      "ablate.lrs", "ablate.prescale",
      "seed", "out", "scope",
  };
  return keys;
}

namespace {
std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace

void RunSpec::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  require(std::find(keys.begin(), keys.end(), key) != keys.end(), ErrorKind::config,
          "unknown configuration key: " + key);
  values[key] = value;
}

bool RunSpec::has(const std::string& key) const { return values.count(key) > 0; }

std::string RunSpec::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

int64_t RunSpec::get_int(const std::string& key, int64_t fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    require(pos == it->second.size(), ErrorKind::config, "trailing junk");
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail(ErrorKind::config, "not an integer: " + key + " = " + it->second);
  }
}

double RunSpec::get_double(const std::string& key, double fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    require(pos == it->second.size(), ErrorKind::config, "trailing junk");
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail(ErrorKind::config, "not a number: " + key + " = " + it->second);
  }
}

bool RunSpec::get_bool(const std::string& key, bool fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  fail(ErrorKind::config, "not a boolean: " + key + " = " + v);
}

std::string RunSpec::echo() const {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

RunSpec parse_text(const std::string& text) {
  RunSpec rs;
  rs.file_text = text;
  std::istringstream in(text);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    require(eq != std::string::npos, ErrorKind::config,
            "line " + std::to_string(lineno) + ": expected `key = value`");
    rs.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return rs;
}

RunSpec parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::config, "cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

model::VitConfig vit_config(const RunSpec& rs) {
  model::VitConfig cfg;
  if (rs.has("preset")) {
    auto p = model::preset_by_name(rs.get_string("preset", ""));
    require(p.has_value(), ErrorKind::config,
            "unknown preset: " + rs.get_string("preset", ""));
    cfg = *p;
  } else {
    cfg.width = rs.get_int("width", 0);
    cfg.depth = rs.get_int("depth", 0);
    cfg.mlp_dim = rs.get_int("mlp", 0);
    cfg.num_heads = rs.get_int("heads", 0);
    require(cfg.width > 0 && cfg.depth > 0 && cfg.mlp_dim > 0 && cfg.num_heads > 0,
            ErrorKind::config, "either a preset or width/depth/mlp/heads is required");
  }
  cfg.patch = rs.get_int("patch", cfg.patch);
  cfg.image = rs.get_int("image", cfg.image);
  cfg.channels = rs.get_int("channels", cfg.channels);
  cfg.num_classes = rs.get_int("classes", cfg.num_classes);
  cfg.qk_norm = rs.get_bool("qk_norm", cfg.qk_norm);
  cfg.parallel_block = rs.get_bool("parallel_block", cfg.parallel_block);
  cfg.validate();
  return cfg;
}

mesh::MeshConfig mesh_config(const RunSpec& rs) {
  mesh::MeshConfig m;
  m.t = rs.get_int("mesh.t", 1);
  m.k = rs.get_int("mesh.k", 1);
  m.bytes_per_float = rs.get_int("mesh.bytes_per_float", 4);
  m.link_bandwidth = rs.get_double("mesh.bandwidth", 1e9);
  m.device_flops = rs.get_double("mesh.device_flops", 1e12);
  m.validate();
  return m;
}

trainer::Schedule schedule(const RunSpec& rs) {
  trainer::Schedule s;
  s.peak_lr = rs.get_double("sched.peak_lr", 1e-3);
  s.warmup_steps = rs.get_int("sched.warmup", 10000);
  s.cooldown_steps = rs.get_int("sched.cooldown", 30000);
  s.total_steps = rs.get_int("sched.total", 177000);
  s.validate();
  return s;
}

trainer::TrainConfig train_config(const RunSpec& rs) {
  trainer::TrainConfig t;
  t.wd_head = rs.get_double("train.wd_head", 3.0);
  t.wd_body = rs.get_double("train.wd_body", 0.03);
  t.batch = rs.get_int("train.batch", 8);
  t.seed = static_cast<uint64_t>(rs.get_int("seed", 0));
  t.qk_norm = rs.get_bool("qk_norm", true);
  std::string exec = rs.get_string("train.execution", "replicated");
  if (exec == "replicated") {
    t.execution = trainer::Execution::replicated;
  } else if (exec == "sharded") {
    t.execution = trainer::Execution::sharded;
  } else {
    fail(ErrorKind::config, "train.execution must be replicated or sharded");
  }
  t.k = rs.get_int("train.k", 1);
  t.validate();
  return t;
}

trainer::SyntheticTask synthetic_task(const RunSpec& rs, const model::VitConfig& cfg) {
  trainer::SyntheticTask task;
  task.seed = static_cast<uint64_t>(rs.get_int("seed", 0));
  task.num_classes = cfg.num_classes;
  task.image = cfg.image;
  task.channels = cfg.channels;
  task.noise = rs.get_double("task.noise", 0.05);
  return task;
}

int64_t thread_cap() {
  int64_t hw = static_cast<int64_t>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  const char* env = std::getenv("MESHVIT_THREADS");
  if (!env) return hw;
  try {
    int64_t v = std::stoll(env);
    return std::max<int64_t>(1, std::min(v, hw));
  } catch (...) {
    return hw;
  }
}

}  // namespace meshvit::runspec
