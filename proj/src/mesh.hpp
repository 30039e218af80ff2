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
#include <string>
#include <vector>

#include "model.hpp"
#include "tensor.hpp"

namespace meshvit::mesh {

// t x k logical device grid: t is the data-parallel axis, k the model axis.
// The time model is analytic: durations are floats/bandwidth and
// flops/device_flops. The simulator verifies schedules and volumes, not
// silicon.
struct MeshConfig {
  int64_t t = 1;
  int64_t k = 1;
  int64_t bytes_per_float = 4;
  double link_bandwidth = 1e9;   // floats per time unit, per directed link
  double device_flops = 1e12;    // FLOPs per time unit

  void validate() const {
    require(t >= 1 && k >= 1, ErrorKind::config, "mesh extents must be >= 1");
    require(link_bandwidth > 0 && device_flops > 0, ErrorKind::config,
            "mesh rates must be positive");
    require(bytes_per_float > 0, ErrorKind::config, "bytes_per_float must be positive");
  }
};

enum class EventKind { compute, send, recv };
const char* event_kind_name(EventKind k);

struct Event {
  EventKind kind;
  double start = 0.0;
  double end = 0.0;
  double amount = 0.0;  // floats for send/recv, FLOPs for compute
  std::string tag;
};

struct DeviceTimeline {
  int64_t row = 0;
  int64_t col = 0;
  std::vector<Event> events;
};

struct Timeline {
  std::vector<DeviceTimeline> devices;

  DeviceTimeline& device(int64_t row, int64_t col);
  double makespan() const;
  // Appends another timeline with all times shifted by `offset` (used to
  // chain sequential phases into one schedule).
  void append_shifted(const Timeline& other, double offset);
  // One CSV row per event: device_row,device_col,kind,start,end,size,tag.
  std::string to_csv() const;
  // Structural invariants: same-kind events on one device do not overlap;
  // every recv has a matching send (same tag, same duration) on a neighbor.
  void check_consistency() const;
};

struct CollectiveReport {
  int64_t per_device_comm_floats = 0;
  int64_t rounds = 0;
  double makespan = 0.0;
  bool overlapped = false;
};

// Ring all-gather over the model axis (k devices in mesh row `row`): every
// device ends with the concatenation of all chunks in index order. Chunks
// move col i -> col (i+1) mod k; per-device traffic is (k-1)*chunk floats.
std::pair<std::vector<Tensor>, CollectiveReport> ring_all_gather(
    const std::vector<Tensor>& chunks, const MeshConfig& mesh,
    Timeline* timeline = nullptr, int64_t row = 0, const std::string& tag_prefix = "ag");

// Ring reduce-scatter: device i ends with sum_j partials[j] restricted to
// block i. Contributions are reduced in ring order starting from the owner's
// successor, so results are deterministic.
std::pair<std::vector<Tensor>, CollectiveReport> ring_reduce_scatter(
    const std::vector<Tensor>& partials, const MeshConfig& mesh,
    Timeline* timeline = nullptr, int64_t row = 0, const std::string& tag_prefix = "rs");

// Pipeline cost model for one sharded linear: round 0 is compute only;
// in round j >= 1 the j-th communication runs concurrently with the j-th
// compute and round j+1 starts when both finish:
//   makespan = t_m(0) + sum_{j=1..k-1} max(t_c(j), t_m(j)).
// For uniform chunks this reduces to t_m + (k-1)*max(t_c, t_m).
struct OverlapReport {
  double overlapped = 0.0;
  double non_overlapped = 0.0;  // sum of all compute plus all comm
};
OverlapReport schedule_overlapped(const std::vector<double>& compute_chunks,
                                  const std::vector<double>& comm_chunks);

// MFU under the 6N training-FLOPs convention.
double mfu(const model::VitConfig& cfg, double tokens_per_sec_per_device,
           double peak_flops_per_device);

}  // namespace meshvit::mesh
