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
#include <doctest.h>

#include <cmath>

#include "rng.hpp"
#include "shard.hpp"

using namespace meshvit;
using namespace meshvit::shard;

namespace {

mesh::MeshConfig mk_mesh(int64_t k, int64_t t = 1) {
  mesh::MeshConfig m;
  m.t = t;
  m.k = k;
  m.link_bandwidth = 50.0;
  m.device_flops = 500.0;
  return m;
}

double rel_err(const Tensor& got, const Tensor& want) {
  REQUIRE(got.same_shape(want));
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < got.size(); ++i) {
    double d = got.data[i] - want.data[i];
    num += d * d;
    den += want.data[i] * want.data[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

}  // namespace

TEST_CASE("shard_matrix blocks reassemble exactly; chooser follows the asymmetry") {
  Rng rng(201);
  Tensor a = random_normal(rng, {8, 12}, 1.0);
  for (ShardMode mode : {ShardMode::row, ShardMode::column}) {
    ShardedMatrix s = shard_matrix(a, mode, 4);
    Tensor back = s.assemble();
    for (int64_t i = 0; i < a.size(); ++i) CHECK(back.data[i] == a.data[i]);
  }
  CHECK_THROWS_AS(shard_matrix(a, ShardMode::row, 3), Error);

  // MLP out-projection (m=width, n=4*width) -> column; in-projection -> row;
  // square ties -> row, and both volumes agree there.
  CHECK(choose_sharding(64, 256) == ShardMode::column);
  CHECK(choose_sharding(256, 64) == ShardMode::row);
  CHECK(choose_sharding(128, 128) == ShardMode::row);
}

TEST_CASE("row-sharded matvec: k=1 plain, identity case, unsharded oracle") {
  Rng rng(202);

  // k=1 is a plain matmul with zero communication.
  Tensor a1 = random_normal(rng, {6, 4}, 1.0);
  Tensor x1 = random_normal(rng, {4, 1}, 1.0);
  auto [y1, rep1] = row_sharded_matvec(shard_matrix(a1, ShardMode::row, 1),
                                       shard_vector(x1, 1, Space::input), mk_mesh(1));
  Tensor direct = matmul(a1, x1);
  for (int64_t i = 0; i < direct.size(); ++i)
    CHECK(y1.assemble().data[i] == direct.data[i]);
  CHECK(rep1.per_device_comm_floats == 0);

  // Identity matrix: y == x bit places, comm = (k-1)(n/k).
  const int64_t k = 4, n = 16;
  Tensor eye = Tensor::identity(n);
  Tensor x = random_normal(rng, {n, 1}, 1.0);
  auto [y, rep] = row_sharded_matvec(shard_matrix(eye, ShardMode::row, k),
                                     shard_vector(x, k, Space::input), mk_mesh(k));
  Tensor yf = y.assemble();
  for (int64_t i = 0; i < n; ++i) CHECK(yf.data[i] == x.data[i]);
  CHECK(rep.per_device_comm_floats == (k - 1) * (n / k));

  // Random 16x16, k=4: within 1e-12 relative of the unsharded oracle.
  Tensor ar = random_normal(rng, {16, 16}, 1.0);
  Tensor xr = random_normal(rng, {16, 1}, 1.0);
  auto [yr, rep_r] = row_sharded_matvec(shard_matrix(ar, ShardMode::row, 4),
                                        shard_vector(xr, 4, Space::input), mk_mesh(4));
  CHECK(rel_err(yr.assemble(), matmul(ar, xr)) <= 1e-12);

  CHECK_THROWS_AS(row_sharded_matvec(shard_matrix(ar, ShardMode::column, 4),
                                     shard_vector(xr, 4, Space::input), mk_mesh(4)),
                  Error);
}

TEST_CASE("column-sharded matvec: k=1, locality of one-hot input, oracle") {
  Rng rng(203);

  Tensor a1 = random_normal(rng, {6, 4}, 1.0);
  Tensor x1 = random_normal(rng, {4, 1}, 1.0);
  auto [y1, rep1] = col_sharded_matvec(shard_matrix(a1, ShardMode::column, 1),
                                       shard_vector(x1, 1, Space::input), mk_mesh(1));
  Tensor direct = matmul(a1, x1);
  for (int64_t i = 0; i < direct.size(); ++i)
    CHECK(y1.assemble().data[i] == direct.data[i]);

  // Input supported only on device 0's block: only device-0 partials are
  // nonzero before the reduction.
  const int64_t k = 4, m = 8, n = 16;
  Tensor a = random_normal(rng, {m, n}, 1.0);
  Tensor xhot = Tensor::zeros({n, 1});
  xhot.data[2] = 1.5;  // inside block 0
  ShardedMatrix sa = shard_matrix(a, ShardMode::column, k);
  ShardedVector sx = shard_vector(xhot, k, Space::input);
  for (int64_t i = 1; i < k; ++i) {
    Tensor p = matmul(sa.blocks[i], sx.blocks[i]);
    for (double v : p.data) CHECK(v == 0.0);
  }
  auto [y, rep] = col_sharded_matvec(sa, sx, mk_mesh(k));
  CHECK(rel_err(y.assemble(), matmul(a, xhot)) <= 1e-12);
  CHECK(rep.per_device_comm_floats == (k - 1) * (m / k));

  // Random 8x32, k=4.
  Tensor ar = random_normal(rng, {8, 32}, 1.0);
  Tensor xr = random_normal(rng, {32, 1}, 1.0);
  auto [yr, rep_r] = col_sharded_matvec(shard_matrix(ar, ShardMode::column, 4),
                                        shard_vector(xr, 4, Space::input), mk_mesh(4));
  CHECK(rel_err(yr.assemble(), matmul(ar, xr)) <= 1e-12);
}

TEST_CASE("volume asymmetry: comm(row) - comm(column) == (k-1)(n-m)/k exactly") {
  Rng rng(204);
  for (int64_t k : {2, 4, 8}) {
    for (int rep = 0; rep < 10; ++rep) {
      int64_t m = k * (1 + static_cast<int64_t>(rng.next_uniform() * 6));
      int64_t n = k * (1 + static_cast<int64_t>(rng.next_uniform() * 6));
      Tensor a = random_normal(rng, {m, n}, 1.0);
      Tensor x = random_normal(rng, {n, 1}, 1.0);
      auto [yr, rrow] = row_sharded_matvec(shard_matrix(a, ShardMode::row, k),
                                           shard_vector(x, k, Space::input), mk_mesh(k));
      auto [yc, rcol] = col_sharded_matvec(shard_matrix(a, ShardMode::column, k),
                                           shard_vector(x, k, Space::input), mk_mesh(k));
      CHECK(rrow.per_device_comm_floats - rcol.per_device_comm_floats ==
            (k - 1) * (n - m) / k);
      if (m != n) {
        int64_t chosen = choose_sharding(m, n) == ShardMode::row
                             ? rrow.per_device_comm_floats
                             : rcol.per_device_comm_floats;
        CHECK(chosen == std::min(rrow.per_device_comm_floats,
                                 rcol.per_device_comm_floats));
        CHECK(chosen < std::max(rrow.per_device_comm_floats,
                                rcol.per_device_comm_floats));
      }
    }
  }
}

TEST_CASE("sharded fused block: k=1 bit-equality and k>1 oracle equivalence") {
  model::VitConfig cfg;
  cfg.width = 32;
  cfg.depth = 1;
  cfg.mlp_dim = 128;
  cfg.num_heads = 4;
  cfg.patch = 4;
  cfg.image = 8;
  cfg.channels = 1;
  cfg.num_classes = 2;
  model::VitParams p = model::init_params(cfg, Rng(205));
  model::BlockParams bp = model::block_view(p, cfg, 0);

  Rng rng(206);
  Tensor x_rows = random_normal(rng, {4, cfg.width}, 1.0);  // 4 tokens
  Tensor want = model::fused_forward(x_rows, bp, cfg);
  Tensor x_fm = transpose(x_rows);

  // k=1 reduces to fused_forward bit-exactly.
  {
    ShardedBlockParams sp = shard_block_params(bp, cfg, 1);
    auto [y, rep] = sharded_block_forward(shard_vector(x_fm, 1, Space::input), bp, sp,
                                          cfg, mk_mesh(1));
    Tensor got = transpose(y.assemble());
    for (int64_t i = 0; i < got.size(); ++i) CHECK(got.data[i] == want.data[i]);
    CHECK(rep.comm_floats_total == 0);
  }

  for (int64_t k : {2, 4, 8}) {
    ShardedBlockParams sp = shard_block_params(bp, cfg, k);
    auto [y, rep] = sharded_block_forward(shard_vector(x_fm, k, Space::input), bp, sp,
                                          cfg, mk_mesh(k));
    Tensor got = transpose(y.assemble());
    CHECK(rel_err(got, want) <= 1e-9);
    // Per-column comm: both fused linears move (k-1)(W/k) floats per token.
    CHECK(rep.row_comm_floats_per_col == (k - 1) * (cfg.width / k));
    CHECK(rep.col_comm_floats_per_col == (k - 1) * (cfg.width / k));
    CHECK(rep.comm_floats_total ==
          2 * (k - 1) * (cfg.width / k) * 4);  // 4 tokens
    // Linear outputs per device hold 1/k of the unsharded activations.
    CHECK(rep.activation_floats_per_col ==
          (3 * cfg.width + cfg.mlp_dim + cfg.width) / k);
  }
}

TEST_CASE("sharded block backward matches the replicated gradients") {
  model::VitConfig cfg;
  cfg.width = 16;
  cfg.depth = 1;
  cfg.mlp_dim = 48;
  cfg.num_heads = 2;
  cfg.patch = 4;
  cfg.image = 8;
  cfg.channels = 1;
  cfg.num_classes = 2;
  model::VitParams p = model::init_params(cfg, Rng(207));
  model::BlockParams bp = model::block_view(p, cfg, 0);
  Rng rng(208);
  Tensor x_rows = random_normal(rng, {3, cfg.width}, 1.0);
  Tensor dy_rows = random_normal(rng, {3, cfg.width}, 1.0);

  // Replicated reference via the traced block path.
  model::BlockTrace tr = model::detail::block_forward_trace(x_rows, bp, cfg);
  model::VitParams ref_grads = model::zeros_like(p);
  // Reuse the full-model backward machinery through a single-block proxy:
  // differentiate sum(dy .* block(x)) by hand against the sharded result.
  // The replicated gradient comes from finite differences on the fused path.
  auto fused_proj = [&](const model::VitParams& q) {
    model::BlockParams b = model::block_view(q, cfg, 0);
    Tensor out = model::fused_forward(x_rows, b, cfg);
    double s = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) s += out.data[i] * dy_rows.data[i];
    return s;
  };

  for (int64_t k : {1, 2, 4}) {
    ShardedBlockParams sp = shard_block_params(bp, cfg, k);
    ShardedBlockTrace strace;
    auto [y, rep] = sharded_block_forward(shard_vector(transpose(x_rows), k, Space::input),
                                          bp, sp, cfg, mk_mesh(k), &strace);
    ShardedVector dy = shard_vector(transpose(dy_rows), k, Space::input);
    dy.space = Space::input;
    ShardedBlockGrads g =
        sharded_block_backward(strace, bp, sp, cfg, dy, mk_mesh(k));

    // Weight gradients against central finite differences on the fused path.
    struct Item {
      const char* name;
      const Tensor* got;
    } items[] = {
        {"block000/w_qkv", &g.dw_qkv},       {"block000/w_mlp_in", &g.dw_mlp_in},
        {"block000/w_attn_out", &g.dw_attn_out}, {"block000/w_mlp_out", &g.dw_mlp_out},
        {"block000/b_mlp_in", &g.db_mlp_in}, {"block000/out_bias", &g.dout_bias},
        {"block000/ln_gain", &g.dln_gain},   {"block000/q_gain", &g.dq_gain},
        {"block000/k_gain", &g.dk_gain},
    };
    for (const Item& item : items) {
      model::VitParams q = p;
      Tensor fd = Tensor::zeros(q[item.name].shape);
      const double h = 1e-6;
      for (int64_t i = 0; i < fd.size(); ++i) {
        double keep = q[item.name].data[i];
        q[item.name].data[i] = keep + h;
        double hi = fused_proj(q);
        q[item.name].data[i] = keep - h;
        double lo = fused_proj(q);
        q[item.name].data[i] = keep;
        fd.data[i] = (hi - lo) / (2 * h);
      }
      INFO("k=" << k << " tensor=" << item.name);
      CHECK(rel_err(*item.got, fd) <= 1e-5);
    }

    // Input gradient via finite differences on the input.
    Tensor fdx = Tensor::zeros(x_rows.shape);
    const double h = 1e-6;
    Tensor xm = x_rows;
    for (int64_t i = 0; i < xm.size(); ++i) {
      double keep = xm.data[i];
      xm.data[i] = keep + h;
      Tensor out_hi = model::fused_forward(xm, bp, cfg);
      xm.data[i] = keep - h;
      Tensor out_lo = model::fused_forward(xm, bp, cfg);
      xm.data[i] = keep;
      double acc = 0.0;
      for (int64_t j = 0; j < out_hi.size(); ++j)
        acc += (out_hi.data[j] - out_lo.data[j]) * dy_rows.data[j];
      fdx.data[i] = acc / (2 * h);
    }
    CHECK(rel_err(transpose(g.dx.assemble()), fdx) <= 1e-5);
  }
  (void)ref_grads;
  (void)tr;
}

TEST_CASE("param store: round trip, thresholds, scatter-reduce, prefetch overlap") {
  model::VitConfig cfg;
  cfg.width = 16;
  cfg.depth = 2;
  cfg.mlp_dim = 32;
  cfg.num_heads = 2;
  cfg.patch = 4;
  cfg.image = 8;
  cfg.channels = 1;
  cfg.num_classes = 4;
  model::VitParams p = model::init_params(cfg, Rng(209));

  // t=1 -> no communication, identity behaviour.
  {
    ShardedParamStore store(p, mk_mesh(1, 1), ShardPolicy{});
    CHECK(store.degenerate_replicated());
    for (const std::string& n : p.names) CHECK(store.gather_floats_per_device(n) == 0);
  }

  // Low threshold: every tensor shards; gather round-trips bit-identically.
  ShardPolicy aggressive;
  aggressive.min_floats_to_shard = 1;
  ShardedParamStore store(p, mk_mesh(1, 4), aggressive);
  CHECK(!store.degenerate_replicated());
  for (size_t i = 0; i < p.names.size(); ++i) {
    Tensor back = store.gather(p.names[i]);
    REQUIRE(back.same_shape(p.tensors[i]));
    for (int64_t j = 0; j < back.size(); ++j)
      CHECK(back.data[j] == p.tensors[i].data[j]);
  }

  // Gradient scatter-reduce equals the dense sum-then-slice oracle.
  Rng rng(210);
  std::vector<Tensor> replicas;
  const std::string name = "block000/w_qkv";
  for (int i = 0; i < 4; ++i)
    replicas.push_back(random_normal(rng, p[name].shape, 1.0));
  std::vector<Tensor> reduced = store.scatter_reduce_grad(name, replicas);
  Tensor dense = Tensor::zeros(p[name].shape);
  for (const Tensor& r : replicas) dense = add(dense, r);
  int64_t off = 0;
  for (const Tensor& chunk : reduced) {
    for (int64_t j = 0; j < chunk.size(); ++j)
      CHECK(chunk.data[j] == doctest::Approx(dense.data[off + j]).epsilon(1e-12));
    off += chunk.size();
  }
  CHECK(off == dense.size());

  // Prefetch: layer l+1's gather overlaps layer l's compute, and no layer
  // computes before its own gather has completed.
  std::vector<int64_t> gather_floats = {600, 600, 600, 600};
  std::vector<double> flops = {5000, 5000, 5000, 5000};
  PrefetchSchedule sched = prefetch_forward_schedule(gather_floats, flops, mk_mesh(1, 4));
  sched.timeline.check_consistency();
  for (size_t l = 0; l < flops.size(); ++l)
    CHECK(sched.gather_end[l] <= sched.compute_start[l] + 1e-12);
  bool overlapped = false;
  for (size_t l = 0; l + 1 < flops.size(); ++l)
    if (sched.gather_start[l + 1] < sched.compute_end[l] &&
        sched.gather_end[l + 1] > sched.compute_start[l])
      overlapped = true;
  CHECK(overlapped);
}

TEST_CASE("batched tokens are independent matvec columns") {
  Rng rng(212);
  const int64_t k = 4, m = 8, n = 16, cols = 5;
  Tensor a = random_normal(rng, {m, n}, 1.0);
  Tensor xs = random_normal(rng, {n, cols}, 1.0);
  for (bool row_mode : {true, false}) {
    ShardedMatrix sa = shard_matrix(a, row_mode ? ShardMode::row : ShardMode::column,
                                    row_mode ? k : k);
    auto run = [&](const Tensor& input) {
      ShardedVector sx = shard_vector(input, k, Space::input);
      return row_mode ? row_sharded_matvec(sa, sx, mk_mesh(k)).first.assemble()
                      : col_sharded_matvec(sa, sx, mk_mesh(k)).first.assemble();
    };
    Tensor batched = run(xs);
    for (int64_t c = 0; c < cols; ++c) {
      Tensor one = run(slice_cols(xs, c, c + 1));
      for (int64_t r = 0; r < m; ++r) CHECK(batched.at(r, c) == one.at(r, 0));
    }
  }
}

TEST_CASE("matvec timelines are internally consistent and overlap-shaped") {
  Rng rng(213);
  Tensor a = random_normal(rng, {16, 16}, 1.0);
  Tensor x = random_normal(rng, {16, 1}, 1.0);
  mesh::Timeline tl;
  auto [y, rep] = row_sharded_matvec(shard_matrix(a, ShardMode::row, 4),
                                     shard_vector(x, 4, Space::input), mk_mesh(4), &tl);
  tl.check_consistency();
  CHECK(tl.makespan() == doctest::Approx(rep.makespan).epsilon(1e-12));
  // Round j's transfer shares its window with round j's compute.
  bool overlap_seen = false;
  for (const auto& dev : tl.devices) {
    for (const auto& send : dev.events) {
      if (send.kind != mesh::EventKind::send) continue;
      for (const auto& comp : dev.events)
        if (comp.kind == mesh::EventKind::compute && comp.start == send.start)
          overlap_seen = true;
    }
  }
  CHECK(overlap_seen);
}

TEST_CASE("fault hook: a sign flip inside the column matvec breaks the oracle") {
  Rng rng(211);
  Tensor a = random_normal(rng, {8, 8}, 1.0);
  Tensor x = random_normal(rng, {8, 1}, 1.0);
  set_test_fault(Fault::col_matvec_sign_flip);
  auto [y, rep] = col_sharded_matvec(shard_matrix(a, ShardMode::column, 4),
                                     shard_vector(x, 4, Space::input), mk_mesh(4));
  set_test_fault(Fault::none);
  CHECK(rel_err(y.assemble(), matmul(a, x)) > 1e-9);
}
