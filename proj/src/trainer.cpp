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
#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace meshvit::trainer {

double lr_at(const Schedule& s, int64_t step) {
  s.validate();
  require(step >= 0 && step <= s.total_steps, ErrorKind::domain,
          "step outside the schedule range");
  if (step < s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  int64_t cooldown_start = s.total_steps - s.cooldown_steps;
  auto rsqrt = [&](int64_t q) {
    return s.peak_lr * std::sqrt(static_cast<double>(s.warmup_steps) /
                                 static_cast<double>(q));
  };
  if (step < cooldown_start || s.cooldown_steps == 0) return rsqrt(step);
  // Linear ramp from the main-phase value at the cooldown joint to zero.
  return rsqrt(cooldown_start) * static_cast<double>(s.total_steps - step) /
         static_cast<double>(s.cooldown_steps);
}

std::string Telemetry::csv_header() {
  return "step,loss,lr,max_abs_logit,min_entropy,grad_norm\n";
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string Telemetry::to_csv() const {
  std::string out = csv_header();
  for (const TelemetryRecord& r : records) {
    out += std::to_string(r.step) + "," + fmt_double(r.loss) + "," + fmt_double(r.lr) +
           "," + fmt_double(r.max_abs_logit) + "," + fmt_double(r.min_entropy) + "," +
           fmt_double(r.grad_norm) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

Tensor SyntheticTask::prototype(int64_t cls) const {
  require(cls >= 0 && cls < num_classes, ErrorKind::domain, "class out of range");
  Rng rng = Rng(seed).fork("proto", static_cast<uint64_t>(cls));
  return random_normal(rng, {1, image * image * channels}, 1.0);
}

std::pair<Tensor, Tensor> SyntheticTask::batch(int64_t step, int64_t batch_size) const {
  require(step >= 0 && batch_size >= 1, ErrorKind::domain, "bad batch request");
  Tensor images = Tensor::zeros({batch_size, image * image * channels});
  Tensor labels = Tensor::zeros({batch_size, num_classes});
  for (int64_t i = 0; i < batch_size; ++i) {
    uint64_t idx = static_cast<uint64_t>(step) * batch_size + i;
    Rng pick = Rng(seed).fork("class", idx);
    int64_t cls = static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(num_classes));
    Tensor proto = prototype(cls);
    Rng nrng = Rng(seed).fork("noise", idx);
    for (int64_t j = 0; j < images.cols(); ++j)
      images.at(i, j) = proto.data[j] + noise * nrng.next_normal();
    labels.at(i, cls) = 1.0;
  }
  return {std::move(images), std::move(labels)};
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

DecayGroups weight_decay_groups(const model::VitParams& params) {
  DecayGroups g;
  for (const std::string& n : params.names) {
    if (model::is_gain_param(n) || model::is_bias_param(n))
      g.excluded.push_back(n);
    else if (model::is_head_param(n))
      g.head.push_back(n);
    else
      g.body.push_back(n);
  }
  return g;
}

void apply_sgd_step(model::VitParams& params, const model::VitParams& grads,
                    double lr, const TrainConfig& tcfg) {
  DecayGroups groups = weight_decay_groups(params);
  auto decay_of = [&](const std::string& name) {
    for (const std::string& n : groups.head)
      if (n == name) return tcfg.wd_head;
    for (const std::string& n : groups.body)
      if (n == name) return tcfg.wd_body;
    return 0.0;
  };
  for (size_t i = 0; i < params.names.size(); ++i) {
    double wd = decay_of(params.names[i]);
    Tensor& p = params.tensors[i];
    const Tensor& g = grads.tensors[i];
    require(p.same_shape(g), ErrorKind::state, "gradient/parameter shape mismatch");
    double shrink = 1.0 - lr * wd;
    for (int64_t j = 0; j < p.size(); ++j)
      p.data[j] = p.data[j] * shrink - lr * g.data[j];
  }
}

// ---------------------------------------------------------------------------
// Step implementations
// ---------------------------------------------------------------------------

namespace {

struct StepOutcome {
  double loss = 0.0;
  double max_abs_logit = 0.0;
  double min_entropy = 0.0;
  model::VitParams grads;
};

StepOutcome replicated_step(const Tensor& images, const Tensor& labels,
                            const model::VitParams& p, const model::VitConfig& cfg) {
  StepOutcome out;
  model::ForwardTrace trace = model::model_forward(images, p, cfg);
  out.loss = model::model_loss(trace, labels);
  out.max_abs_logit = trace.max_abs_logit;
  out.min_entropy = trace.min_entropy;
  if (std::isfinite(out.loss))
    out.grads = model::model_backward(images, labels, p, cfg, trace);
  return out;
}

// Sharded execution: encoder blocks run through the sharded fused linears
// (forward and backward); the embedding, MAP head and loss are replicated.
StepOutcome sharded_step(const Tensor& images, const Tensor& labels,
                         const model::VitParams& p, const model::VitConfig& cfg,
                         int64_t k) {
  mesh::MeshConfig mesh_cfg;
  mesh_cfg.k = k;
  StepOutcome out;
  out.grads = model::zeros_like(p);
  out.min_entropy = std::numeric_limits<double>::infinity();

  std::vector<shard::ShardedBlockParams> sps;
  sps.reserve(cfg.depth);
  for (int64_t l = 0; l < cfg.depth; ++l)
    sps.push_back(shard::shard_block_params(model::block_view(p, cfg, l), cfg, k));

  const int64_t batch = images.rows();
  Tensor logits = Tensor::zeros({batch, cfg.num_classes});
  std::vector<Tensor> patch_rows(batch);
  std::vector<model::MapTrace> heads(batch);
  std::vector<std::vector<shard::ShardedBlockTrace>> traces(batch);
  for (int64_t b = 0; b < batch; ++b) {
    Tensor img = slice_rows(images, b, b + 1);
    img.shape = {cfg.image, cfg.image, cfg.channels};
    patch_rows[b] = model::detail::extract_patches(img, cfg);
    Tensor x = add(add_bias_rows(matmul(patch_rows[b], p["patch_embed/w"]),
                                 p["patch_embed/b"]),
                   p["pos_embed"]);
    shard::ShardedVector xs = shard::shard_vector(transpose(x), k, shard::Space::input);
    traces[b].resize(cfg.depth);
    for (int64_t l = 0; l < cfg.depth; ++l) {
      auto [y, rep] = shard::sharded_block_forward(xs, model::block_view(p, cfg, l),
                                                   sps[l], cfg, mesh_cfg, &traces[b][l]);
      xs = std::move(y);
      out.max_abs_logit = std::max(out.max_abs_logit, traces[b][l].attn.max_abs_logit);
      for (double h : traces[b][l].attn.entropy)
        out.min_entropy = std::min(out.min_entropy, h);
    }
    Tensor x_rows = transpose(xs.assemble());
    heads[b] = model::detail::map_head_trace(x_rows, p, cfg);
    Tensor lrow = add_bias_rows(matmul(heads[b].pooled, p["classifier/w"]),
                                p["classifier/b"]);
    for (int64_t c = 0; c < cfg.num_classes; ++c) logits.at(b, c) = lrow.at(0, c);
  }
  out.loss = model::sigmoid_xent(logits, labels);
  if (!std::isfinite(out.loss)) return out;

  Tensor dlogits = model::sigmoid_xent_backward(logits, labels);
  for (int64_t b = 0; b < batch; ++b) {
    Tensor dl = slice_rows(dlogits, b, b + 1);
    axpy(out.grads["classifier/w"], 1.0, matmul(transpose(heads[b].pooled), dl));
    axpy(out.grads["classifier/b"], 1.0, col_sum(dl));
    Tensor dpooled = matmul(dl, transpose(p["classifier/w"]));
    Tensor dx_rows = model::detail::map_backward(heads[b], p, cfg, dpooled, out.grads);
    shard::ShardedVector dxs =
        shard::shard_vector(transpose(dx_rows), k, shard::Space::input);
    for (int64_t l = cfg.depth - 1; l >= 0; --l) {
      shard::ShardedBlockGrads g = shard::sharded_block_backward(
          traces[b][l], model::block_view(p, cfg, l), sps[l], cfg, dxs, mesh_cfg);
      std::string pre = model::block_prefix(l) + "/";
      axpy(out.grads[pre + "w_qkv"], 1.0, g.dw_qkv);
      axpy(out.grads[pre + "q_gain"], 1.0, g.dq_gain);
      axpy(out.grads[pre + "k_gain"], 1.0, g.dk_gain);
      axpy(out.grads[pre + "w_attn_out"], 1.0, g.dw_attn_out);
      axpy(out.grads[pre + "w_mlp_in"], 1.0, g.dw_mlp_in);
      axpy(out.grads[pre + "b_mlp_in"], 1.0, g.db_mlp_in);
      axpy(out.grads[pre + "w_mlp_out"], 1.0, g.dw_mlp_out);
      axpy(out.grads[pre + "out_bias"], 1.0, g.dout_bias);
      axpy(out.grads[pre + "ln_gain"], 1.0, g.dln_gain);
      dxs = std::move(g.dx);
    }
    Tensor dx0 = transpose(dxs.assemble());
    axpy(out.grads["pos_embed"], 1.0, dx0);
    axpy(out.grads["patch_embed/w"], 1.0, matmul(transpose(patch_rows[b]), dx0));
    axpy(out.grads["patch_embed/b"], 1.0, col_sum(dx0));
  }
  return out;
}

double grad_norm_of(const model::VitParams& grads) {
  double ss = 0.0;
  for (const Tensor& t : grads.tensors)
    for (double v : t.data) ss += v * v;
  return std::sqrt(ss);
}

double qk_bound_over_blocks(const model::VitParams& p, const model::VitConfig& cfg) {
  double bound = 0.0;
  for (int64_t l = 0; l < cfg.depth; ++l)
    bound = std::max(bound, model::qk_logit_bound(model::block_view(p, cfg, l), cfg));
  return bound;
}

}  // namespace

TrainResult train(const model::VitConfig& cfg, const model::VitParams& initial,
                  const SyntheticTask& task, const TrainConfig& tcfg,
                  const Schedule& schedule, int64_t steps) {
  cfg.validate();
  tcfg.validate();
  schedule.validate();
  require(cfg.parallel_block, ErrorKind::config,
          "training supports the parallel block form only");
  require(steps >= 0 && steps <= schedule.total_steps, ErrorKind::config,
          "steps must fit the schedule");
  require(task.num_classes == cfg.num_classes && task.image == cfg.image &&
              task.channels == cfg.channels,
          ErrorKind::config, "task does not match the model config");
  model::VitConfig run_cfg = cfg;
  run_cfg.qk_norm = tcfg.qk_norm;
  if (tcfg.execution == Execution::sharded) {
    require(cfg.width % tcfg.k == 0 && (3 * cfg.width + cfg.mlp_dim) % tcfg.k == 0 &&
                (cfg.width + cfg.mlp_dim) % tcfg.k == 0,
            ErrorKind::config, "model extents not divisible by the sharding k");
  }

  TrainResult result;
  result.params = initial;
  for (int64_t step = 0; step < steps; ++step) {
    auto [images, labels] = task.batch(step, tcfg.batch);
    double lr = lr_at(schedule, step);
    TelemetryRecord rec;
    rec.step = step;
    rec.lr = lr;
    try {
      StepOutcome out = tcfg.execution == Execution::replicated
                            ? replicated_step(images, labels, result.params, run_cfg)
                            : sharded_step(images, labels, result.params, run_cfg, tcfg.k);
      rec.loss = out.loss;
      rec.max_abs_logit = out.max_abs_logit;
      rec.min_entropy = out.min_entropy;
      if (!std::isfinite(out.loss)) {
        rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
        result.telemetry.records.push_back(rec);
        result.status = TrainStatus::diverged;
        return result;
      }
      rec.grad_norm = grad_norm_of(out.grads);
      result.telemetry.records.push_back(rec);
      apply_sgd_step(result.params, out.grads, lr, tcfg);
    } catch (const Error& e) {
      // Non-finite values surface as domain errors inside the kernels; the
      // run halts with the telemetry so far and a distinct status.
      if (e.kind() != ErrorKind::domain) throw;
      rec.loss = std::numeric_limits<double>::quiet_NaN();
      rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
      result.telemetry.records.push_back(rec);
      result.status = TrainStatus::diverged;
      return result;
    }
  }
  return result;
}

const char* train_status_name(TrainStatus s) {
  return s == TrainStatus::ok ? "ok" : "diverged";
}

std::vector<AblationOutcome> ablate_qk_norm(const model::VitConfig& cfg,
                                            const SyntheticTask& task,
                                            const TrainConfig& tcfg,
                                            const Schedule& schedule,
                                            const std::vector<double>& lr_list,
                                            int64_t steps, double qk_prescale) {
  std::vector<AblationOutcome> outcomes;
  for (double lr : lr_list) {
    require(lr >= 0.0, ErrorKind::config, "ablation learning rates must be >= 0");
    // lr == 0 is the no-update control: both arms stay bit-identical.
    Schedule sched = schedule;
    if (lr > 0.0) sched.peak_lr = lr;
    AblationOutcome outcome;
    outcome.lr = lr;
    for (bool qk_on : {true, false}) {
      model::VitConfig arm_cfg = cfg;
      arm_cfg.qk_norm = qk_on;
      TrainConfig arm_tcfg = tcfg;
      arm_tcfg.qk_norm = qk_on;
      model::VitParams params = model::init_params(arm_cfg, Rng(tcfg.seed));
      if (qk_prescale != 1.0) {
        for (int64_t l = 0; l < cfg.depth; ++l) {
          Tensor& wqkv = params[model::block_prefix(l) + "/w_qkv"];
          for (int64_t i = 0; i < wqkv.rows(); ++i)
            for (int64_t j = 0; j < 2 * cfg.width; ++j)  // Q and K column slices
              wqkv.at(i, j) *= qk_prescale;
        }
      }

      AblationArm arm;
      // The bound moves with the gains, so it is evaluated per step before
      // the forward pass.
      model::VitParams current = std::move(params);
      bool held = true;
      double bound_max = 0.0;
      for (int64_t step = 0; step < steps; ++step) {
        double bound = qk_bound_over_blocks(current, arm_cfg);
        bound_max = std::max(bound_max, bound);
        auto [images, labels] = task.batch(step, arm_tcfg.batch);
        StepOutcome out;
        try {
          out = replicated_step(images, labels, current, arm_cfg);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::domain) throw;
          arm.status = TrainStatus::diverged;
          break;
        }
        TelemetryRecord rec;
        rec.step = step;
        rec.lr = lr == 0.0 ? 0.0 : lr_at(sched, step);
        rec.loss = out.loss;
        rec.max_abs_logit = out.max_abs_logit;
        rec.min_entropy = out.min_entropy;
        arm.max_abs_logit = std::max(arm.max_abs_logit, out.max_abs_logit);
        if (qk_on && out.max_abs_logit > bound + 1e-9) held = false;
        if (!std::isfinite(out.loss)) {
          rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
          arm.telemetry.records.push_back(rec);
          arm.status = TrainStatus::diverged;
          break;
        }
        rec.grad_norm = grad_norm_of(out.grads);
        arm.telemetry.records.push_back(rec);
        apply_sgd_step(current, out.grads, rec.lr, arm_tcfg);
      }
      arm.bound = bound_max;
      arm.bound_held = qk_on ? held : false;
      arm.final_params = std::move(current);
      if (qk_on) {
        require(held, ErrorKind::state,
                "QK-norm logit bound violated on the normalized arm");
        outcome.with_qk_norm = std::move(arm);
      } else {
        outcome.without_qk_norm = std::move(arm);
      }
    }
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

}  // namespace meshvit::trainer
