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

// Runtime property suites behind `verify`. These re-check the module
// invariants on fresh random cases each run (fixed seeds, so reruns are
// reproducible), independently of the compiled-in unit tests.

#include "verify.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <sstream>
#include <thread>

#include "mesh.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "shard.hpp"
#include "tensor.hpp"
#include "trainer.hpp"

namespace meshvit::verify {

namespace {

struct Property {
  std::string scope;
  std::string name;
  std::function<std::string()> body;  // returns detail; throws on failure
};

void expect(bool cond, const std::string& what) {
  if (!cond) throw std::runtime_error(what);
}

double rel_err(const Tensor& got, const Tensor& want) {
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < got.size(); ++i) {
    double d = got.data[i] - want.data[i];
    num += d * d;
    den += want.data[i] * want.data[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

// ------------------------------ tensor ------------------------------------

std::string prop_matmul_oracle() {
  Rng rng(1001);
  for (int rep = 0; rep < 25; ++rep) {
    int64_t m = 1 + rng.next_u64() % 9, p = 1 + rng.next_u64() % 9,
            n = 1 + rng.next_u64() % 9;
    Tensor a = random_normal(rng, {m, p}, 1.0);
    Tensor b = random_normal(rng, {p, n}, 1.0);
    Tensor c = matmul(a, b);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t l = 0; l < p; ++l) s += a.at(i, l) * b.at(l, j);
        expect(c.at(i, j) == s, "matmul differs from the triple-loop oracle");
      }
  }
  return "25 randomized shapes, bit-exact";
}

std::string prop_rms_scale_invariance() {
  Rng rng(1002);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = random_normal(rng, {2, 24}, 1.0);
    Tensor g = random_uniform(rng, {24}, 0.5, 2.0);
    Tensor base = rms_norm(x, g);
    Tensor pow2 = rms_norm(scale(x, 512.0), g);
    for (int64_t i = 0; i < base.size(); ++i)
      expect(pow2.data[i] == base.data[i], "power-of-two rescale not bit-identical");
    double c = 0.1 + 5.0 * rng.next_uniform();
    Tensor any = rms_norm(scale(x, c), g);
    for (int64_t i = 0; i < base.size(); ++i)
      expect(std::fabs(any.data[i] - base.data[i]) <= 1e-12 * std::fabs(base.data[i]) + 1e-12,
             "positive rescale drifted past 1e-12");
  }
  return "50 cases, pow2 bit-exact, arbitrary within 1e-12";
}

std::string prop_softmax_rows() {
  Rng rng(1003);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor x = random_uniform(rng, {1, 12}, -8.0, 8.0);
    Tensor p = softmax(x);
    double sum = 0.0;
    for (double v : p.data) sum += v;
    expect(std::fabs(sum - 1.0) <= 1e-12, "row sum drifted");
    Tensor shifted = softmax(add(x, Tensor::full({1, 12}, 123.0)));
    for (int64_t i = 0; i < p.size(); ++i)
      expect(std::fabs(shifted.data[i] - p.data[i]) <= 1e-12, "shift invariance broke");
  }
  return "100 rows";
}

std::string prop_backward_fd() {
  Rng rng(1004);
  Tensor a = random_normal(rng, {3, 3}, 1.0);
  Tensor b = random_normal(rng, {3, 3}, 1.0);
  Tensor up = random_normal(rng, {3, 3}, 1.0);
  MatmulGrads g = matmul_backward(a, b, up);
  const double h = 1e-5;
  for (int64_t i = 0; i < a.size(); ++i) {
    Tensor ap = a, am = a;
    ap.data[i] += h;
    am.data[i] -= h;
    double hi = 0.0, lo = 0.0;
    Tensor chi = matmul(ap, b), clo = matmul(am, b);
    for (int64_t j = 0; j < chi.size(); ++j) {
      hi += chi.data[j] * up.data[j];
      lo += clo.data[j] * up.data[j];
    }
    double fd = (hi - lo) / (2 * h);
    expect(std::fabs(g.da.data[i] - fd) <=
               1e-5 * std::max(1.0, std::fabs(fd)),
           "matmul dA finite-difference mismatch");
  }
  return "matmul backward vs central differences";
}

std::string prop_rng_reproducible() {
  Rng a(42);
  expect(a.next_u64() == 13679457532755275413ull, "rng golden vector changed");
  Rng b(42, 0);
  Rng c(42, 0);
  for (int i = 0; i < 64; ++i) expect(b.next_u64() == c.next_u64(), "stream fork drifted");
  return "golden vector + stream equality";
}

// ------------------------------ model -------------------------------------

model::VitConfig small_cfg(int64_t width, int64_t heads, int64_t mlp) {
  model::VitConfig cfg;
  cfg.width = width;
  cfg.depth = 1;
  cfg.mlp_dim = mlp;
  cfg.num_heads = heads;
  cfg.patch = 4;
  cfg.image = 8;
  cfg.channels = 1;
  cfg.num_classes = 2;
  return cfg;
}

std::string prop_qk_scale_invariance() {
  model::VitConfig cfg = small_cfg(32, 4, 64);
  model::VitParams p = model::init_params(cfg, Rng(2001));
  Rng rng(2002);
  Tensor x = random_normal(rng, {5, cfg.width}, 1.0);
  auto [base, st0] = model::qk_attention(x, model::block_view(p, cfg, 0), cfg);
  model::VitParams q = p;
  Tensor& wqkv = q["block000/w_qkv"];
  for (int64_t i = 0; i < wqkv.rows(); ++i)
    for (int64_t j = 0; j < cfg.width; ++j) wqkv.at(i, j) *= 1000.0;
  auto [scaled, st1] = model::qk_attention(x, block_view(q, cfg, 0), cfg);
  for (int64_t i = 0; i < base.size(); ++i)
    expect(std::fabs(scaled.data[i] - base.data[i]) <= 1e-9,
           "x1000 Q rescale moved outputs past 1e-9");
  return "x1000 Q-column rescale invariant";
}

std::string prop_logit_bound_and_entropy() {
  Rng seed_rng(2003);
  for (int rep = 0; rep < 400; ++rep) {
    model::VitConfig cfg = small_cfg(16 << (seed_rng.next_u64() % 2), 2, 32);
    model::VitParams p = model::init_params(cfg, Rng(seed_rng.next_u64()));
    Tensor& qg = p["block000/q_gain"];
    Tensor& kg = p["block000/k_gain"];
    Rng rng(seed_rng.next_u64());
    for (double& v : qg.data) v = -2.0 + 4.0 * rng.next_uniform();
    for (double& v : kg.data) v = -2.0 + 4.0 * rng.next_uniform();
    int64_t s = 2 + rng.next_u64() % 6;
    Tensor x = random_normal(rng, {s, cfg.width}, 2.0);
    model::BlockParams bp = model::block_view(p, cfg, 0);
    auto [out, st] = model::qk_attention(x, bp, cfg);
    double bound = model::qk_logit_bound(bp, cfg);
    expect(st.max_abs_logit <= bound + 1e-9, "QK logit bound violated");
    for (int64_t row = 0; row < st.weights.rows(); ++row) {
      double mx = st.logits.at(row, 0), mn = st.logits.at(row, 0);
      for (int64_t jcol = 1; jcol < st.logits.cols(); ++jcol) {
        mx = std::max(mx, st.logits.at(row, jcol));
        mn = std::min(mn, st.logits.at(row, jcol));
      }
      expect(st.entropy[row] >= std::log(static_cast<double>(s)) - (mx - mn) - 1e-9,
             "entropy floor violated");
    }
  }
  return "400 fuzzed forwards, bound and entropy floor hold";
}

std::string prop_fusion_equivalence() {
  Rng rng(2004);
  for (int64_t width : {16, 32, 64}) {
    for (int64_t heads : {2, 4}) {
      model::VitConfig cfg = small_cfg(width, heads, 2 * width);
      model::VitParams p = model::init_params(cfg, Rng(width + heads));
      model::BlockParams bp = model::block_view(p, cfg, 0);
      Tensor x = random_normal(rng, {4, width}, 1.0);
      Tensor a = model::parallel_block(x, bp, cfg);
      Tensor b = model::fused_forward(x, bp, cfg);
      for (int64_t i = 0; i < a.size(); ++i)
        expect(std::fabs(a.data[i] - b.data[i]) <= 1e-9, "fusion equivalence broke");
    }
  }
  return "width in {16,32,64} x heads in {2,4}";
}

std::string prop_residual_identity() {
  model::VitConfig cfg = small_cfg(16, 2, 32);
  cfg.qk_norm = false;  // zero Q/K rows are a domain error with the norm on
  model::VitParams p = model::init_params(cfg, Rng(2005));
  for (size_t i = 0; i < p.names.size(); ++i) {
    const std::string& n = p.names[i];
    if (n.find("w_") != std::string::npos || n.find("bias") != std::string::npos ||
        n.find("/b") != std::string::npos)
      p.tensors[i] = Tensor::zeros(p.tensors[i].shape);
  }
  Rng rng(2006);
  Tensor x = random_normal(rng, {3, cfg.width}, 1.0);
  Tensor y = model::parallel_block(x, model::block_view(p, cfg, 0), cfg);
  for (int64_t i = 0; i < x.size(); ++i)
    expect(y.data[i] == x.data[i], "zero-weight block is not the identity");
  return "zero-weight block is the identity map";
}

std::string prop_count_consistency() {
  model::VitConfig cfg = small_cfg(16, 2, 32);
  model::VitParams p = model::init_params(cfg, Rng(2007));
  expect(p.total_size() == model::parameter_count(cfg, model::CountScope::full),
         "allocation diverges from the schema count");
  expect(model::parameter_count(cfg, model::CountScope::full) ==
             model::parameter_count(cfg, model::CountScope::body) +
                 model::parameter_count(cfg, model::CountScope::head),
         "body/head split is not a partition");
  return "schema, allocation and scopes agree";
}

// ------------------------------ shard -------------------------------------

std::string prop_shard_oracle() {
  Rng rng(3001);
  for (int64_t k : {1, 2, 4, 8}) {
    mesh::MeshConfig m;
    m.k = k;
    for (int rep = 0; rep < 30; ++rep) {
      int64_t rows = k * (1 + rng.next_u64() % 6);
      int64_t cols = k * (1 + rng.next_u64() % 6);
      Tensor a = random_normal(rng, {rows, cols}, 1.0);
      Tensor x = random_normal(rng, {cols, 1}, 1.0);
      Tensor want = matmul(a, x);
      auto [yr, rr] = shard::row_sharded_matvec(
          shard::shard_matrix(a, shard::ShardMode::row, k),
          shard::shard_vector(x, k, shard::Space::input), m);
      expect(rel_err(yr.assemble(), want) <= 1e-12, "row-sharded oracle drifted");
      expect(rr.per_device_comm_floats == (k - 1) * (cols / k),
             "row-sharded volume wrong");
      auto [yc, rc] = shard::col_sharded_matvec(
          shard::shard_matrix(a, shard::ShardMode::column, k),
          shard::shard_vector(x, k, shard::Space::input), m);
      expect(rel_err(yc.assemble(), want) <= 1e-12, "column-sharded oracle drifted");
      expect(rc.per_device_comm_floats == (k - 1) * (rows / k),
             "column-sharded volume wrong");
    }
  }
  return "k in {1,2,4,8} x 30 cases per mode, <= 1e-12 relative";
}

std::string prop_choose_sharding() {
  Rng rng(3002);
  for (int rep = 0; rep < 200; ++rep) {
    int64_t m = 1 + rng.next_u64() % 512, n = 1 + rng.next_u64() % 512;
    shard::ShardMode mode = shard::choose_sharding(m, n);
    if (m < n) expect(mode == shard::ShardMode::column, "chooser missed column");
    if (m >= n) expect(mode == shard::ShardMode::row, "chooser missed row/tie");
  }
  return "200 random extents";
}

std::string prop_sharded_block() {
  model::VitConfig cfg = small_cfg(32, 4, 128);
  model::VitParams p = model::init_params(cfg, Rng(3003));
  model::BlockParams bp = model::block_view(p, cfg, 0);
  Rng rng(3004);
  Tensor x_rows = random_normal(rng, {4, cfg.width}, 1.0);
  Tensor want = model::fused_forward(x_rows, bp, cfg);
  for (int64_t k : {1, 2, 4}) {
    mesh::MeshConfig m;
    m.k = k;
    shard::ShardedBlockParams sp = shard::shard_block_params(bp, cfg, k);
    auto [y, rep] = shard::sharded_block_forward(
        shard::shard_vector(transpose(x_rows), k, shard::Space::input), bp, sp, cfg, m);
    expect(rel_err(transpose(y.assemble()), want) <= 1e-9,
           "sharded block diverged from fused_forward");
    expect(rep.row_comm_floats_per_col + rep.col_comm_floats_per_col ==
               2 * (k - 1) * (cfg.width / k),
           "block volume formula sum wrong");
  }
  return "k in {1,2,4} against the unsharded fused oracle";
}

std::string prop_param_store() {
  model::VitConfig cfg = small_cfg(16, 2, 32);
  model::VitParams p = model::init_params(cfg, Rng(3005));
  mesh::MeshConfig m;
  m.t = 4;
  shard::ShardPolicy pol;
  pol.min_floats_to_shard = 64;
  shard::ShardedParamStore store(p, m, pol);
  for (size_t i = 0; i < p.names.size(); ++i) {
    Tensor back = store.gather(p.names[i]);
    for (int64_t j = 0; j < back.size(); ++j)
      expect(back.data[j] == p.tensors[i].data[j], "gather round trip not bit-exact");
  }
  shard::PrefetchSchedule sched = shard::prefetch_forward_schedule(
      {512, 512, 512}, {4096, 4096, 4096}, m);
  for (size_t l = 0; l < 3; ++l)
    expect(sched.gather_end[l] <= sched.compute_start[l] + 1e-12,
           "a layer computed before its gather finished");
  sched.timeline.check_consistency();
  return "round trip bit-exact, prefetch legality holds";
}

// ------------------------------ mesh --------------------------------------

std::string prop_conservation() {
  Rng rng(4001);
  for (int64_t k : {2, 3, 4, 8}) {
    mesh::MeshConfig m;
    m.k = k;
    std::vector<Tensor> chunks;
    for (int64_t i = 0; i < k; ++i) chunks.push_back(random_normal(rng, {6, 1}, 1.0));
    mesh::Timeline tl;
    ring_all_gather(chunks, m, &tl);
    double sent = 0.0, recv = 0.0;
    for (const auto& d : tl.devices)
      for (const auto& e : d.events) {
        if (e.kind == mesh::EventKind::send) sent += e.amount;
        if (e.kind == mesh::EventKind::recv) recv += e.amount;
      }
    expect(sent == recv, "sent floats do not equal received floats");
    tl.check_consistency();
  }
  return "all-gather conservation for k in {2,3,4,8}";
}

std::string prop_collective_volumes() {
  Rng rng(4002);
  for (int64_t k : {1, 2, 3, 4, 8}) {
    mesh::MeshConfig m;
    m.k = k;
    int64_t c = 12;
    std::vector<Tensor> chunks;
    for (int64_t i = 0; i < k; ++i) chunks.push_back(random_normal(rng, {c, 1}, 1.0));
    auto [outs, rep] = ring_all_gather(chunks, m);
    expect(rep.per_device_comm_floats == (k - 1) * c, "all-gather volume off");
    std::vector<Tensor> partials;
    for (int64_t i = 0; i < k; ++i)
      partials.push_back(random_normal(rng, {k * c, 1}, 1.0));
    auto [red, rrep] = ring_reduce_scatter(partials, m);
    expect(rrep.per_device_comm_floats == (k - 1) * c, "reduce-scatter volume off");
  }
  return "(k-1)(payload/k) exact for k in {1,2,3,4,8}";
}

std::string prop_overlap_dominance() {
  Rng rng(4003);
  for (int rep = 0; rep < 500; ++rep) {
    int64_t k = 1 + rng.next_u64() % 6;
    std::vector<double> tm, tc;
    bool comm_zero = true;
    for (int64_t i = 0; i < k; ++i) tm.push_back(0.1 + 9.9 * rng.next_uniform());
    for (int64_t i = 0; i + 1 < k; ++i) {
      double v = rng.next_uniform() < 0.25 ? 0.0 : 0.1 + 9.9 * rng.next_uniform();
      comm_zero = comm_zero && v == 0.0;
      tc.push_back(v);
    }
    mesh::OverlapReport r = mesh::schedule_overlapped(tm, tc);
    expect(r.overlapped <= r.non_overlapped + 1e-12, "overlap dominance broke");
    bool equal = std::fabs(r.overlapped - r.non_overlapped) <= 1e-12;
    expect(equal == (k == 1 || comm_zero), "overlap equality condition broke");
  }
  return "500 randomized schedules";
}

std::string prop_timeline_determinism() {
  Rng rng(4004);
  std::vector<Tensor> chunks;
  for (int64_t i = 0; i < 4; ++i) chunks.push_back(random_normal(rng, {8, 1}, 1.0));
  mesh::MeshConfig m;
  m.k = 4;
  mesh::Timeline t1, t2;
  ring_all_gather(chunks, m, &t1);
  ring_all_gather(chunks, m, &t2);
  expect(t1.to_csv() == t2.to_csv(), "timelines not bit-identical across runs");
  return "identical inputs give identical timelines";
}

std::vector<Property> all_properties() {
  return {
      {"tensor", "matmul_triple_loop_oracle", prop_matmul_oracle},
      {"tensor", "rms_norm_scale_invariance", prop_rms_scale_invariance},
      {"tensor", "softmax_row_sums_and_shift", prop_softmax_rows},
      {"tensor", "backward_finite_differences", prop_backward_fd},
      {"tensor", "rng_reproducibility", prop_rng_reproducible},
      {"model", "qk_scale_invariance", prop_qk_scale_invariance},
      {"model", "qk_logit_bound_and_entropy_floor", prop_logit_bound_and_entropy},
      {"model", "fusion_equivalence", prop_fusion_equivalence},
      {"model", "residual_identity", prop_residual_identity},
      {"model", "parameter_count_consistency", prop_count_consistency},
      {"shard", "sharded_matvec_oracle_and_volumes", prop_shard_oracle},
      {"shard", "choose_sharding_asymmetry", prop_choose_sharding},
      {"shard", "sharded_block_equivalence", prop_sharded_block},
      {"shard", "param_store_roundtrip_and_prefetch", prop_param_store},
      {"mesh", "collective_conservation", prop_conservation},
      {"mesh", "collective_volume_exactness", prop_collective_volumes},
      {"mesh", "overlap_dominance", prop_overlap_dominance},
      {"mesh", "timeline_determinism", prop_timeline_determinism},
  };
}

}  // namespace

bool valid_scope(const std::string& scope) {
  return scope == "all" || scope == "tensor" || scope == "model" ||
         scope == "shard" || scope == "mesh";
}

std::vector<PropertyResult> run(const std::string& scope, int64_t threads) {
  require(valid_scope(scope), ErrorKind::config, "unknown verify scope: " + scope);
  std::vector<Property> props;
  for (Property& p : all_properties())
    if (scope == "all" || scope == p.scope) props.push_back(std::move(p));

  std::vector<PropertyResult> results(props.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= props.size()) return;
      PropertyResult r;
      r.scope = props[i].scope;
      r.name = props[i].name;
      try {
        r.detail = props[i].body();
        r.pass = true;
      } catch (const std::exception& e) {
        r.pass = false;
        r.detail = e.what();
      }
      results[i] = std::move(r);  // canonical order by index
    }
  };
  int64_t n = std::max<int64_t>(1, std::min<int64_t>(threads, static_cast<int64_t>(props.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int64_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

}  // namespace meshvit::verify
