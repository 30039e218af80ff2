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
#include "mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace meshvit::mesh {

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::compute: return "compute";
    case EventKind::send: return "send";
    case EventKind::recv: return "recv";
  }
  return "?";
}

DeviceTimeline& Timeline::device(int64_t row, int64_t col) {
  for (DeviceTimeline& d : devices)
    if (d.row == row && d.col == col) return d;
  devices.push_back({row, col, {}});
  return devices.back();
}

double Timeline::makespan() const {
  double m = 0.0;
  for (const DeviceTimeline& d : devices)
    for (const Event& e : d.events) m = std::max(m, e.end);
  return m;
}

void Timeline::append_shifted(const Timeline& other, double offset) {
  for (const DeviceTimeline& d : other.devices) {
    DeviceTimeline& mine = device(d.row, d.col);
    for (Event e : d.events) {
      e.start += offset;
      e.end += offset;
      mine.events.push_back(std::move(e));
    }
  }
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string Timeline::to_csv() const {
  std::string out = "device_row,device_col,kind,start,end,size,tag\n";
  for (const DeviceTimeline& d : devices)
    for (const Event& e : d.events) {
      out += std::to_string(d.row) + "," + std::to_string(d.col) + "," +
             event_kind_name(e.kind) + "," + fmt_double(e.start) + "," +
             fmt_double(e.end) + "," + fmt_double(e.amount) + "," + e.tag + "\n";
    }
  return out;
}

void Timeline::check_consistency() const {
  for (const DeviceTimeline& d : devices) {
    for (EventKind kind : {EventKind::compute, EventKind::send, EventKind::recv}) {
      std::vector<const Event*> same;
      for (const Event& e : d.events)
        if (e.kind == kind) same.push_back(&e);
      std::sort(same.begin(), same.end(),
                [](const Event* a, const Event* b) { return a->start < b->start; });
      for (size_t i = 1; i < same.size(); ++i)
        require(same[i]->start >= same[i - 1]->end - 1e-12, ErrorKind::state,
                "overlapping same-kind events on one device");
    }
  }
  // Every recv pairs with a send elsewhere: identical tag and duration.
  std::map<std::string, std::pair<const DeviceTimeline*, const Event*>> sends;
  for (const DeviceTimeline& d : devices)
    for (const Event& e : d.events)
      if (e.kind == EventKind::send) sends[e.tag] = {&d, &e};
  for (const DeviceTimeline& d : devices)
    for (const Event& e : d.events)
      if (e.kind == EventKind::recv) {
        auto it = sends.find(e.tag);
        require(it != sends.end(), ErrorKind::state, "recv without a send: " + e.tag);
        const auto& [sd, se] = it->second;
        require(sd->row != d.row || sd->col != d.col, ErrorKind::state,
                "device sent to itself: " + e.tag);
        require(std::fabs((se->end - se->start) - (e.end - e.start)) <= 1e-12,
                ErrorKind::state, "send/recv duration mismatch: " + e.tag);
      }
}

namespace {

void check_equal_chunks(const std::vector<Tensor>& chunks) {
  require(!chunks.empty(), ErrorKind::dimension, "empty chunk list");
  for (const Tensor& c : chunks)
    require(c.same_shape(chunks[0]), ErrorKind::dimension,
            "collective chunks must have equal shapes");
}

}  // namespace

std::pair<std::vector<Tensor>, CollectiveReport> ring_all_gather(
    const std::vector<Tensor>& chunks, const MeshConfig& mesh, Timeline* timeline,
    int64_t row, const std::string& tag_prefix) {
  mesh.validate();
  require(static_cast<int64_t>(chunks.size()) == mesh.k, ErrorKind::dimension,
          "all-gather expects one chunk per model-axis device");
  check_equal_chunks(chunks);
  const int64_t k = mesh.k;
  const int64_t c = chunks[0].size();

  // Every device ends with the concatenation in index order.
  std::vector<int64_t> full_shape = chunks[0].shape;
  full_shape[0] *= k;
  Tensor gathered = Tensor::zeros(full_shape);
  int64_t off = 0;
  for (const Tensor& ch : chunks) {
    std::copy(ch.data.begin(), ch.data.end(), gathered.data.begin() + off);
    off += ch.size();
  }
  std::vector<Tensor> out(k, gathered);

  CollectiveReport report;
  report.rounds = k - 1;
  report.per_device_comm_floats = (k - 1) * c;
  double tc = static_cast<double>(c) / mesh.link_bandwidth;
  report.makespan = (k - 1) * tc;
  if (timeline && k > 1) {
    for (int64_t r = 0; r < k - 1; ++r) {
      for (int64_t d = 0; d < k; ++d) {
        int64_t chunk = ((d - r) % k + k) % k;
        std::string tag = tag_prefix + "/round" + std::to_string(r) + "/chunk" +
                          std::to_string(chunk) + "/from" + std::to_string(d);
        timeline->device(row, d).events.push_back(
            {EventKind::send, r * tc, (r + 1) * tc, static_cast<double>(c), tag});
        timeline->device(row, (d + 1) % k)
            .events.push_back(
                {EventKind::recv, r * tc, (r + 1) * tc, static_cast<double>(c), tag});
      }
    }
  }
  return {std::move(out), report};
}

std::pair<std::vector<Tensor>, CollectiveReport> ring_reduce_scatter(
    const std::vector<Tensor>& partials, const MeshConfig& mesh, Timeline* timeline,
    int64_t row, const std::string& tag_prefix) {
  mesh.validate();
  require(static_cast<int64_t>(partials.size()) == mesh.k, ErrorKind::dimension,
          "reduce-scatter expects one partial per model-axis device");
  check_equal_chunks(partials);
  const int64_t k = mesh.k;
  require(partials[0].rank() >= 1 && partials[0].shape[0] % k == 0,
          ErrorKind::dimension, "reduce-scatter payload not divisible by k");
  const int64_t block_rows = partials[0].shape[0] / k;
  const int64_t row_stride = partials[0].size() / partials[0].shape[0];
  const int64_t c = block_rows * row_stride;

  // Block b is reduced in ring order starting from the owner's successor:
  // p[b+1] + p[b+2] + ... + p[b+k-1] + p[b]; deterministic by construction.
  std::vector<int64_t> block_shape = partials[0].shape;
  block_shape[0] = block_rows;
  std::vector<Tensor> out;
  out.reserve(k);
  for (int64_t b = 0; b < k; ++b) {
    Tensor acc = Tensor::zeros(block_shape);
    for (int64_t step = 1; step <= k; ++step) {
      int64_t j = (b + step) % k;
      const double* src = partials[j].data.data() + b * c;
      for (int64_t i = 0; i < c; ++i) acc.data[i] += src[i];
    }
    out.push_back(std::move(acc));
  }

  CollectiveReport report;
  report.rounds = k - 1;
  report.per_device_comm_floats = (k - 1) * c;
  double tc = static_cast<double>(c) / mesh.link_bandwidth;
  report.makespan = (k - 1) * tc;
  if (timeline && k > 1) {
    for (int64_t s = 0; s < k - 1; ++s) {
      for (int64_t d = 0; d < k; ++d) {
        int64_t block = ((d - 1 - s) % k + k) % k;
        std::string tag = tag_prefix + "/round" + std::to_string(s) + "/block" +
                          std::to_string(block) + "/from" + std::to_string(d);
        timeline->device(row, d).events.push_back(
            {EventKind::send, s * tc, (s + 1) * tc, static_cast<double>(c), tag});
        timeline->device(row, (d + 1) % k)
            .events.push_back(
                {EventKind::recv, s * tc, (s + 1) * tc, static_cast<double>(c), tag});
      }
    }
  }
  return {std::move(out), report};
}

OverlapReport schedule_overlapped(const std::vector<double>& compute_chunks,
                                  const std::vector<double>& comm_chunks) {
  require(!compute_chunks.empty(), ErrorKind::dimension, "no compute chunks");
  require(comm_chunks.size() + 1 == compute_chunks.size(), ErrorKind::dimension,
          "overlap model expects k compute and k-1 comm chunks");
  for (double v : compute_chunks)
    require(v >= 0.0, ErrorKind::domain, "negative compute duration");
  for (double v : comm_chunks)
    require(v >= 0.0, ErrorKind::domain, "negative comm duration");

  OverlapReport r;
  r.overlapped = compute_chunks[0];
  r.non_overlapped = compute_chunks[0];
  for (size_t j = 1; j < compute_chunks.size(); ++j) {
    r.overlapped += std::max(comm_chunks[j - 1], compute_chunks[j]);
    r.non_overlapped += comm_chunks[j - 1] + compute_chunks[j];
  }
  return r;
}

double mfu(const model::VitConfig& cfg, double tokens_per_sec_per_device,
           double peak_flops_per_device) {
  require(tokens_per_sec_per_device > 0 && peak_flops_per_device > 0,
          ErrorKind::domain, "mfu inputs must be positive");
  return model::flops_per_token(cfg, model::FlopsMode::train) *
         tokens_per_sec_per_device / peak_flops_per_device;
}

}  // namespace meshvit::mesh
