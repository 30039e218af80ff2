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

#include <string>
#include <vector>

#include "model.hpp"
#include "shard.hpp"

namespace meshvit::trainer {

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup, reciprocal square-root main phase
// normalized at the warmup joint (peak * sqrt(warmup/step)), linear cooldown
// from the main-phase value to zero at the final step.
// ---------------------------------------------------------------------------

struct Schedule {
  double peak_lr = 1e-3;
  int64_t warmup_steps = 10000;
  int64_t cooldown_steps = 30000;
  int64_t total_steps = 177000;

  void validate() const {
    require(peak_lr > 0, ErrorKind::config, "peak_lr must be positive");
    // The rsqrt phase is anchored at the warmup joint, so a warmup is needed.
    require(warmup_steps >= 1 && cooldown_steps >= 0, ErrorKind::config,
            "warmup must be >= 1 and cooldown >= 0");
    require(warmup_steps + cooldown_steps <= total_steps, ErrorKind::config,
            "warmup + cooldown must not exceed total");
  }
};

// Valid for 0 <= step <= total_steps; lr_at(total_steps) == 0.
double lr_at(const Schedule& s, int64_t step);

// ---------------------------------------------------------------------------
// Telemetry
// ---------------------------------------------------------------------------

struct TelemetryRecord {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double max_abs_logit = 0.0;  // over all blocks and heads
  double min_entropy = 0.0;    // nats, over all attention rows
  double grad_norm = 0.0;
};

struct Telemetry {
  std::vector<TelemetryRecord> records;
  static std::string csv_header();
  std::string to_csv() const;
};

// ---------------------------------------------------------------------------
// Training configuration and synthetic data
// ---------------------------------------------------------------------------

enum class Execution { replicated, sharded };

struct TrainConfig {
  double wd_head = 3.0;
  double wd_body = 0.03;
  int64_t batch = 8;
  uint64_t seed = 0;
  bool qk_norm = true;
  Execution execution = Execution::replicated;
  int64_t k = 1;  // model-axis extent for sharded execution

  void validate() const {
    require(wd_head >= 0 && wd_body >= 0, ErrorKind::config,
            "weight decays must be nonnegative");
    require(batch >= 1, ErrorKind::config, "batch must be >= 1");
    require(k >= 1, ErrorKind::config, "k must be >= 1");
  }
};

// Noisy class prototypes standing in for a real dataset: class c has a fixed
// template image, samples add Gaussian noise, labels are one-hot multi-label
// targets. The stream is indexed by global sample number, so it is identical
// for any batch size.
struct SyntheticTask {
  uint64_t seed = 1;
  int64_t num_classes = 2;
  int64_t image = 8;
  int64_t channels = 1;
  double noise = 0.05;

  Tensor prototype(int64_t cls) const;
  // (images (B, image*image*channels), labels (B, num_classes))
  std::pair<Tensor, Tensor> batch(int64_t step, int64_t batch_size) const;
};

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

struct DecayGroups {
  std::vector<std::string> head;      // MAP head + classifier weights
  std::vector<std::string> body;      // everything else, incl. embeddings
  std::vector<std::string> excluded;  // gains and biases, never decayed
};
DecayGroups weight_decay_groups(const model::VitParams& params);

// Decoupled weight decay: p <- p*(1 - lr*wd) - lr*grad, with wd chosen by
// group and zero for excluded tensors.
void apply_sgd_step(model::VitParams& params, const model::VitParams& grads,
                    double lr, const TrainConfig& tcfg);

enum class TrainStatus { ok, diverged };
const char* train_status_name(TrainStatus s);

struct TrainResult {
  model::VitParams params;
  Telemetry telemetry;
  TrainStatus status = TrainStatus::ok;
};

// Plain SGD with decoupled weight decay on the schedule. A non-finite loss
// (or non-finite values surfacing as domain errors inside the forward) halts
// the run with the divergence status; the telemetry so far is preserved.
TrainResult train(const model::VitConfig& cfg, const model::VitParams& initial,
                  const SyntheticTask& task, const TrainConfig& tcfg,
                  const Schedule& schedule, int64_t steps);

// ---------------------------------------------------------------------------
// QK-norm ablation
// ---------------------------------------------------------------------------

struct AblationArm {
  Telemetry telemetry;
  TrainStatus status = TrainStatus::ok;
  double max_abs_logit = 0.0;    // over the whole run
  double bound = 0.0;            // max over steps of the per-step QK bound
  bool bound_held = false;       // asserted only for the on arm
  model::VitParams final_params;
};

struct AblationOutcome {
  double lr;
  AblationArm with_qk_norm;
  AblationArm without_qk_norm;  // reported, never asserted
};

// Runs the same seeds twice per learning rate (QK norm on/off). The on arm
// checks max_abs_logit <= sqrt(head_dim)*max|q_gain|*max|k_gain| at every
// step; the off arm is telemetry only. qk_prescale scales the Q and K column
// slices of every block's w_qkv after init (the constructed-instability
// setup); the on arm is invariant to it, the off arm is not.
std::vector<AblationOutcome> ablate_qk_norm(const model::VitConfig& cfg,
                                            const SyntheticTask& task,
                                            const TrainConfig& tcfg,
                                            const Schedule& schedule,
                                            const std::vector<double>& lr_list,
                                            int64_t steps, double qk_prescale = 1.0);

}  // namespace meshvit::trainer
