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
#include "commands.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

#include "checkpoint.hpp"
#include "mesh.hpp"
#include "shard.hpp"
#include "verify.hpp"

namespace meshvit::commands {

namespace {

std::string fmt(const char* format, ...) {
  char buf[256];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::config, "cannot write: " + path);
  out << content;
}

std::string manifest_text(const std::string& command, const runspec::RunSpec& rs,
                          const std::string& extra) {
  std::string m = "command = " + command + "\n" + extra + "[config]\n" + rs.echo();
  if (!rs.file_text.empty()) m += "[config_file]\n" + rs.file_text;
  return m;
}

// The published Params[M] column, compared at the body scope (blocks plus
// embeddings) -- the convention of the headline 22B row. The e row was
// published under the full-count convention, so it is reported with both
// numbers.
struct TableRow {
  const char* name;
  double published_millions;
};
constexpr TableRow kTable[] = {
    {"vit_g", 1843.0}, {"vit_e", 3926.0}, {"vit_22b", 21743.0}};

// Output-directory precedence: explicit argument, then the config's `out`
// key, then ./out.
std::string resolve_out(const runspec::RunSpec& rs, const std::string& arg) {
  if (!arg.empty()) return arg;
  return rs.get_string("out", "out");
}

int run_command(const std::function<CommandResult()>& body, CommandResult* out) {
  try {
    *out = body();
  } catch (const Error& e) {
    out->status = e.kind() == ErrorKind::divergence ? 3 : 2;
    out->report = std::string("error: ") + e.what() + "\n";
  } catch (const std::exception& e) {
    out->status = 2;
    out->report = std::string("error: ") + e.what() + "\n";
  }
  return out->status;
}

}  // namespace

CommandResult inspect(const runspec::RunSpec& rs) {
  CommandResult result;
  run_command(
      [&]() -> CommandResult {
        model::VitConfig cfg = runspec::vit_config(rs);
        int64_t full = model::parameter_count(cfg, model::CountScope::full);
        int64_t body = model::parameter_count(cfg, model::CountScope::body);
        int64_t head = model::parameter_count(cfg, model::CountScope::head);
        std::string r = "meshvit inspect\n";
        r += fmt("width=%" PRId64 " depth=%" PRId64 " mlp=%" PRId64
                 " heads=%" PRId64 " patch=%" PRId64 " image=%" PRId64
                 " classes=%" PRId64 "\n",
                 cfg.width, cfg.depth, cfg.mlp_dim, cfg.num_heads, cfg.patch,
                 cfg.image, cfg.num_classes);
        r += fmt("params_full = %" PRId64 " (%.1fM)\n", full, full / 1e6);
        r += fmt("params_body = %" PRId64 " (%.1fM)  # blocks + embeddings\n", body,
                 body / 1e6);
        r += fmt("params_head = %" PRId64 " (%.1fM)  # MAP head + classifier\n", head,
                 head / 1e6);
        r += fmt("flops_per_token_forward = %.6e\n",
                 model::flops_per_token(cfg, model::FlopsMode::forward));
        r += fmt("flops_per_token_train = %.6e\n",
                 model::flops_per_token(cfg, model::FlopsMode::train));
        r += fmt("attention_score_flops_forward = %.6e  # additive, not in 2N/6N\n",
                 model::attention_score_flops_per_token(cfg, model::FlopsMode::forward));
        r += fmt("fused_in_projection = %" PRId64 " x %" PRId64 "\n", cfg.width,
                 cfg.fused_in_cols());
        r += fmt("fused_out_projection = %" PRId64 " x %" PRId64 "\n",
                 cfg.fused_out_rows(), cfg.width);
        std::string preset = rs.get_string("preset", "");
        for (const TableRow& row : kTable) {
          if (preset != row.name) continue;
          double delta = body / (row.published_millions * 1e6) - 1.0;
          r += fmt("table_params = %.0fM, measured_body = %.1fM, delta = %+.2f%%, %s\n",
                   row.published_millions, body / 1e6, 100.0 * delta,
                   std::fabs(delta) <= 0.02 ? "PASS(2%)" : "FAIL(2%)");
          if (preset == std::string("vit_e"))
            r += fmt("table_note = the published e figure matches the full count: "
                     "%.1fM (delta %+.2f%%)\n",
                     full / 1e6, 100.0 * (full / (row.published_millions * 1e6) - 1.0));
        }
        return {0, r};
      },
      &result);
  return result;
}

CommandResult verify(const runspec::RunSpec& rs, const std::string& scope) {
  CommandResult result;
  run_command(
      [&]() -> CommandResult {
        std::string effective =
            scope.empty() ? rs.get_string("scope", "all") : scope;
        std::vector<meshvit::verify::PropertyResult> results =
            meshvit::verify::run(effective, runspec::thread_cap());
        std::string r;
        int64_t failed = 0;
        for (const auto& p : results) {
          r += "check," + p.scope + "," + p.name + "," + (p.pass ? "PASS" : "FAIL") +
               "," + p.detail + "\n";
          if (!p.pass) ++failed;
        }
        r += fmt("summary,pass=%zu,fail=%" PRId64 "\n", results.size() - failed, failed);
        return {failed == 0 ? 0 : 1, r};
      },
      &result);
  return result;
}

CommandResult simulate(const runspec::RunSpec& rs, const std::string& out_dir) {
  CommandResult result;
  run_command(
      [&]() -> CommandResult {
        std::string out = resolve_out(rs, out_dir);
        model::VitConfig cfg = runspec::vit_config(rs);
        mesh::MeshConfig mcfg = runspec::mesh_config(rs);
        const int64_t k = mcfg.k, w = cfg.width, m = cfg.mlp_dim;
        require(w % std::max<int64_t>(k, 1) == 0 && m % std::max<int64_t>(k, 1) == 0,
                ErrorKind::config, "width and mlp must be divisible by mesh.k");

        // Per-layer plan over the four logical linears of each block, with
        // y = A x extents (A = W^T). Volumes and durations are per token.
        struct Linear {
          const char* name;
          int64_t m, n;
        };
        const Linear linears[] = {
            {"w_qkv", 3 * w, w}, {"w_attn_out", w, w}, {"w_mlp_in", m, w},
            {"w_mlp_out", w, m}};

        std::string plan = "layer,linear,m,n,mode,comm_floats_per_device,"
                           "overlapped_makespan,non_overlapped_makespan\n";
        mesh::Timeline timeline;
        double comm_total = 0.0, overlapped_total = 0.0, serial_total = 0.0;
        for (int64_t layer = 0; layer < cfg.depth; ++layer) {
          for (const Linear& lin : linears) {
            shard::ShardMode mode = shard::choose_sharding(lin.m, lin.n);
            int64_t vol = mode == shard::ShardMode::row ? (k - 1) * (lin.n / k)
                                                        : (k - 1) * (lin.m / k);
            double tc = static_cast<double>(mode == shard::ShardMode::row ? lin.n / k
                                                                          : lin.m / k) /
                        mcfg.link_bandwidth;
            double tm = 2.0 * static_cast<double>(lin.m / k) * (lin.n / k) /
                        mcfg.device_flops;
            std::vector<double> tms(k, tm), tcs(std::max<int64_t>(k - 1, 0), tc);
            mesh::OverlapReport rep = mesh::schedule_overlapped(tms, tcs);
            plan += fmt("%" PRId64 ",%s,%" PRId64 ",%" PRId64 ",%s,%" PRId64
                        ",%.17g,%.17g\n",
                        layer, lin.name, lin.m, lin.n, shard::shard_mode_name(mode),
                        vol, rep.overlapped, rep.non_overlapped);
            comm_total += static_cast<double>(vol);
            overlapped_total += rep.overlapped;
            serial_total += rep.non_overlapped;
          }
        }

        // Timeline: one block's four linears run back to back on the k
        // model-axis devices (value payloads are unit token vectors;
        // durations analytic).
        Rng rng(static_cast<uint64_t>(rs.get_int("seed", 0)));
        double clock = 0.0;
        for (const Linear& lin : linears) {
          shard::ShardMode mode = shard::choose_sharding(lin.m, lin.n);
          Tensor a = random_normal(rng, {lin.m, lin.n}, 0.1);
          Tensor x = random_normal(rng, {lin.n, 1}, 1.0);
          mesh::Timeline phase;
          mesh::CollectiveReport rep;
          if (mode == shard::ShardMode::row) {
            rep = shard::row_sharded_matvec(
                      shard::shard_matrix(a, mode, k),
                      shard::shard_vector(x, k, shard::Space::input), mcfg, &phase,
                      lin.name)
                      .second;
          } else {
            rep = shard::col_sharded_matvec(
                      shard::shard_matrix(a, mode, k),
                      shard::shard_vector(x, k, shard::Space::input), mcfg, &phase,
                      lin.name)
                      .second;
          }
          timeline.append_shifted(phase, clock);
          clock += rep.makespan;
        }
        timeline.check_consistency();

        // Parameter-sharding prefetch over the data axis, when t > 1.
        std::string prefetch_note;
        if (mcfg.t > 1) {
          shard::ShardPolicy policy;
          policy.min_floats_to_shard = rs.get_int("shard.threshold", int64_t{1} << 20);
          std::vector<int64_t> gathers(cfg.depth, 0);
          int64_t sharded_tensors = 0;
          for (const model::ParamSpec& spec : model::param_schema(cfg)) {
            if (spec.name.rfind("block", 0) != 0) continue;
            if (spec.size() < policy.min_floats_to_shard) continue;
            int64_t layer = std::stoll(spec.name.substr(5, 3));
            gathers[layer] += spec.size() - spec.size() / mcfg.t;
            ++sharded_tensors;
          }
          std::vector<double> flops(cfg.depth,
                                    2.0 * static_cast<double>(
                                              model::parameter_count(
                                                  cfg, model::CountScope::body)) /
                                        static_cast<double>(cfg.depth));
          shard::PrefetchSchedule sched =
              shard::prefetch_forward_schedule(gathers, flops, mcfg);
          sched.timeline.check_consistency();
          write_file(out + "/prefetch_timeline.csv", sched.timeline.to_csv());
          prefetch_note = fmt("prefetch_makespan = %.17g\n", sched.makespan);
          if (sharded_tensors == 0)
            prefetch_note += "warning = shard.threshold excludes every tensor; "
                             "the parameter store is replicated\n";
        }

        double mfu_value = mesh::mfu(cfg, rs.get_double("tokens_per_sec", 1150.0),
                                     rs.get_double("peak_flops", 2.75e14));
        std::string summary;
        summary += "timeline_scope = one encoder block, per token\n";
        summary += fmt("mesh = %" PRId64 " x %" PRId64 "\n", mcfg.t, mcfg.k);
        summary += fmt("comm_floats_per_device_per_token = %.0f\n", comm_total);
        summary += fmt("overlapped_makespan_per_token = %.17g\n", overlapped_total);
        summary += fmt("non_overlapped_makespan_per_token = %.17g\n", serial_total);
        summary += fmt("overlap_savings = %.17g\n", serial_total - overlapped_total);
        summary += prefetch_note;
        summary += fmt("mfu = %.4f\n", mfu_value);

        write_file(out + "/plan.csv", plan);
        write_file(out + "/timeline.csv", timeline.to_csv());
        write_file(out + "/summary.txt", summary);
        write_file(out + "/manifest.txt", manifest_text("simulate", rs, "status = ok\n"));
        return {0, summary};
      },
      &result);
  return result;
}

CommandResult train(const runspec::RunSpec& rs, const std::string& out_dir, bool ablate) {
  CommandResult result;
  run_command(
      [&]() -> CommandResult {
        std::string out = resolve_out(rs, out_dir);
        model::VitConfig cfg = runspec::vit_config(rs);
        trainer::TrainConfig tcfg = runspec::train_config(rs);
        trainer::Schedule sched = runspec::schedule(rs);
        trainer::SyntheticTask task = runspec::synthetic_task(rs, cfg);
        int64_t steps = rs.get_int("train.steps", 100);
        model::VitParams init = model::init_params(cfg, Rng(tcfg.seed));

        if (ablate) {
          std::vector<double> lrs;
          std::string lr_text = rs.get_string("ablate.lrs", "1e-3");
          size_t pos = 0;
          while (pos < lr_text.size()) {
            size_t comma = lr_text.find(',', pos);
            if (comma == std::string::npos) comma = lr_text.size();
            lrs.push_back(std::stod(lr_text.substr(pos, comma - pos)));
            pos = comma + 1;
          }
          double prescale = rs.get_double("ablate.prescale", 1.0);
          auto outcomes =
              trainer::ablate_qk_norm(cfg, task, tcfg, sched, lrs, steps, prescale);
          std::string r = "qk ablation\n";
          for (size_t i = 0; i < outcomes.size(); ++i) {
            const auto& o = outcomes[i];
            write_file(out + fmt("/ablate_lr%zu_on.csv", i),
                       o.with_qk_norm.telemetry.to_csv());
            write_file(out + fmt("/ablate_lr%zu_off.csv", i),
                       o.without_qk_norm.telemetry.to_csv());
            r += fmt("lr = %.6g\n", o.lr);
            r += fmt("  on_arm: bound = %.6g, max_abs_logit = %.6g, bound_held = %s\n",
                     o.with_qk_norm.bound, o.with_qk_norm.max_abs_logit,
                     o.with_qk_norm.bound_held ? "PASS" : "FAIL");
            r += fmt("  off_arm: max_abs_logit = %.6g, exceeds_on_bound = %s, "
                     "status = %s  # reported, never asserted\n",
                     o.without_qk_norm.max_abs_logit,
                     o.without_qk_norm.max_abs_logit > o.with_qk_norm.bound ? "yes"
                                                                            : "no",
                     trainer::train_status_name(o.without_qk_norm.status));
          }
          write_file(out + "/manifest.txt",
                     manifest_text("train --ablate-qk", rs, "status = ok\n"));
          return {0, r};
        }

        trainer::TrainResult res = trainer::train(cfg, init, task, tcfg, sched, steps);
        write_file(out + "/telemetry.csv", res.telemetry.to_csv());
        checkpoint::save(out + "/checkpoint", res.params, cfg);
        std::string status_line =
            std::string("status = ") + trainer::train_status_name(res.status) + "\n";
        std::string extra = status_line;
        if (!res.telemetry.records.empty())
          extra += fmt("final_loss = %.17g\nsteps_run = %zu\n",
                       res.telemetry.records.back().loss,
                       res.telemetry.records.size());
        write_file(out + "/manifest.txt", manifest_text("train", rs, extra));
        std::string r = "train: " + status_line + extra;
        return {res.status == trainer::TrainStatus::diverged ? 3 : 0, r};
      },
      &result);
  return result;
}

CommandResult schedule(const runspec::RunSpec& rs, const std::string& out_dir) {
  CommandResult result;
  run_command(
      [&]() -> CommandResult {
        std::string out_path = resolve_out(rs, out_dir) + "/schedule.csv";
        trainer::Schedule sched = runspec::schedule(rs);
        int64_t stride = rs.get_int("sched.stride", 1);
        require(stride >= 1, ErrorKind::config, "sched.stride must be >= 1");
        std::string csv = "step,lr\n";
        csv.reserve(static_cast<size_t>(sched.total_steps / stride) * 28 + 64);
        char buf[64];
        for (int64_t step = 0; step <= sched.total_steps; step += stride) {
          std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.17g\n", step,
                        trainer::lr_at(sched, step));
          csv += buf;
        }
        if ((sched.total_steps % stride) != 0) {
          std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.17g\n", sched.total_steps,
                        trainer::lr_at(sched, sched.total_steps));
          csv += buf;
        }
        write_file(out_path, csv);
        std::string r = fmt("schedule: %" PRId64 " steps -> %s\n", sched.total_steps,
                            out_path.c_str());
        return {0, r};
      },
      &result);
  return result;
}

}  // namespace meshvit::commands
