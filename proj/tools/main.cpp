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

// Command-line front end. Talks to the library exclusively through the
// public C API in meshvit/meshvit.h.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "meshvit/meshvit.h"

namespace {

struct RunspecDeleter {
  void operator()(mv_runspec* rs) const { mv_runspec_free(rs); }
};
using RunspecPtr = std::unique_ptr<mv_runspec, RunspecDeleter>;

int fail_usage(const char* what) {
  std::fprintf(stderr, "error: %s\n", what);
  return 2;
}

// Pending key/value overrides, applied after the config file loads so flags
// win over file values.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> kv;
  void add(const std::string& key, const std::string& value) {
    kv.emplace_back(key, value);
  }
};

RunspecPtr build_runspec(const std::string& config_path, const Overrides& ov) {
  RunspecPtr rs(mv_runspec_new());
  if (!rs) throw std::bad_alloc();
  if (!config_path.empty() &&
      mv_runspec_load_file(rs.get(), config_path.c_str()) != MV_OK)
    throw CLI::ValidationError("--config", mv_last_error());
  for (const auto& [k, v] : ov.kv)
    if (mv_runspec_set(rs.get(), k.c_str(), v.c_str()) != MV_OK)
      throw CLI::ValidationError(k, mv_last_error());
  return rs;
}

int emit(mv_status status, char* report) {
  if (report) {
    std::fputs(report, stdout);
    mv_string_free(report);
  }
  if (status != MV_OK && !*mv_last_error())
    std::fprintf(stderr, "error: status %d\n", static_cast<int>(status));
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ViT-22B architecture, mesh-execution simulator and cost model"};
  app.require_subcommand(1);

  std::string config_path, out_dir, preset, scope;
  Overrides ov;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key = value config file");
    cmd->add_option_function<std::string>(
        "--seed", [&](const std::string& v) { ov.add("seed", v); }, "RNG seed");
    cmd->add_option_function<std::string>(
        "--out", [&](const std::string& v) { out_dir = v; }, "output directory");
    cmd->add_option_function<std::string>(
           "--preset", [&](const std::string& v) { ov.add("preset", v); },
           "vit_g | vit_e | vit_22b");
  };
  auto add_dims = [&](CLI::App* cmd) {
    for (const char* key : {"width", "depth", "mlp", "heads", "patch", "image",
                            "channels", "classes"}) {
      std::string k = key;
      cmd->add_option_function<std::string>(
          "--" + k, [&ov, k](const std::string& v) { ov.add(k, v); });
    }
  };

  CLI::App* c_inspect = app.add_subcommand("inspect", "parameter/FLOP report");
  add_common(c_inspect);
  add_dims(c_inspect);

  CLI::App* c_verify = app.add_subcommand("verify", "run module property suites");
  add_common(c_verify);
  c_verify->add_option("--scope", scope, "all | tensor | model | shard | mesh");

  CLI::App* c_sim = app.add_subcommand("simulate", "sharding plan, timeline, MFU");
  add_common(c_sim);
  add_dims(c_sim);
  for (const char* key : {"mesh.t", "mesh.k", "mesh.bandwidth", "mesh.device_flops",
                          "tokens_per_sec", "peak_flops", "shard.threshold"}) {
    std::string k = key;
    std::string flag = "--" + k;
    for (auto& ch : flag)
      if (ch == '.') ch = '-';
    c_sim->add_option_function<std::string>(
        flag, [&ov, k](const std::string& v) { ov.add(k, v); });
  }

  bool ablate = false;
  CLI::App* c_train = app.add_subcommand("train", "toy training run with telemetry");
  add_common(c_train);
  add_dims(c_train);
  c_train->add_flag("--ablate-qk", ablate, "paired QK-normalization ablation");
  for (const char* key :
       {"train.steps", "train.batch", "train.wd_head", "train.wd_body",
        "train.execution", "train.k", "task.noise", "sched.peak_lr", "sched.warmup",
        "sched.cooldown", "sched.total", "qk_norm", "ablate.lrs", "ablate.prescale"}) {
    std::string k = key;
    std::string flag = "--" + k;
    for (auto& ch : flag)
      if (ch == '.') ch = '-';
    c_train->add_option_function<std::string>(
        flag, [&ov, k](const std::string& v) { ov.add(k, v); });
  }
  // steps is the common spelling in quick runs
  c_train->add_option_function<std::string>(
      "--steps", [&](const std::string& v) { ov.add("train.steps", v); });

  CLI::App* c_sched = app.add_subcommand("schedule", "emit (step, lr) CSV");
  add_common(c_sched);
  for (const char* key :
       {"sched.peak_lr", "sched.warmup", "sched.cooldown", "sched.total",
        "sched.stride"}) {
    std::string k = key;
    std::string flag = "--" + k;
    for (auto& ch : flag)
      if (ch == '.') ch = '-';
    c_sched->add_option_function<std::string>(
        flag, [&ov, k](const std::string& v) { ov.add(k, v); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // config/usage errors exit 2
  }

  try {
    RunspecPtr rs = build_runspec(config_path, ov);
    char* report = nullptr;
    mv_status status = MV_CONFIG_ERROR;
    if (c_inspect->parsed()) {
      status = mv_cmd_inspect(rs.get(), &report);
    } else if (c_verify->parsed()) {
      status = mv_cmd_verify(rs.get(), scope.c_str(), &report);
    } else if (c_sim->parsed()) {
      status = mv_cmd_simulate(rs.get(), out_dir.c_str(), &report);
    } else if (c_train->parsed()) {
      status = mv_cmd_train(rs.get(), out_dir.c_str(), ablate ? 1 : 0, &report);
    } else if (c_sched->parsed()) {
      status = mv_cmd_schedule(rs.get(), out_dir.c_str(), &report);
    } else {
      return fail_usage("no subcommand");
    }
    return emit(status, report);
  } catch (const CLI::Error& e) {
    return fail_usage(e.what());
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
  return fail_usage("no subcommand");
}
