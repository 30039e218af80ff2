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
#include "shard.hpp"

#include <algorithm>
#include <cmath>

namespace meshvit::shard {

namespace {
Fault g_fault = Fault::none;
}

void set_test_fault(Fault f) { g_fault = f; }
Fault test_fault() { return g_fault; }

const char* shard_mode_name(ShardMode m) {
  switch (m) {
    case ShardMode::replicated: return "replicated";
    case ShardMode::row: return "row";
    case ShardMode::column: return "column";
  }
  return "?";
}

Tensor ShardedMatrix::assemble() const {
  if (mode == ShardMode::replicated) return blocks.at(0);
  return mode == ShardMode::row ? concat_rows(blocks) : concat_cols(blocks);
}

ShardedMatrix shard_matrix(const Tensor& a, ShardMode mode, int64_t k) {
  require(a.rank() == 2, ErrorKind::dimension, "shard_matrix expects rank 2");
  require(k >= 1, ErrorKind::contract, "k must be >= 1");
  ShardedMatrix s;
  s.m = a.rows();
  s.n = a.cols();
  s.mode = mode;
  if (mode == ShardMode::replicated) {
    s.blocks = {a};
    return s;
  }
  int64_t extent = mode == ShardMode::row ? s.m : s.n;
  require(extent % k == 0, ErrorKind::dimension,
          "sharded extent must be divisible by k");
  int64_t step = extent / k;
  for (int64_t i = 0; i < k; ++i) {
    s.blocks.push_back(mode == ShardMode::row
                           ? slice_rows(a, i * step, (i + 1) * step)
                           : slice_cols(a, i * step, (i + 1) * step));
  }
  return s;
}

Tensor ShardedVector::assemble() const { return concat_rows(blocks); }

ShardedVector shard_vector(const Tensor& x, int64_t k, Space space) {
  require(x.rank() == 2, ErrorKind::dimension,
          "shard_vector expects (len, cols); use cols=1 for plain vectors");
  require(x.rows() % k == 0, ErrorKind::dimension, "length must be divisible by k");
  ShardedVector v;
  v.space = space;
  int64_t step = x.rows() / k;
  for (int64_t i = 0; i < k; ++i) v.blocks.push_back(slice_rows(x, i * step, (i + 1) * step));
  return v;
}

ShardMode choose_sharding(int64_t m, int64_t n) {
  require(m > 0 && n > 0, ErrorKind::dimension, "extents must be positive");
  return m < n ? ShardMode::column : ShardMode::row;
}

// ---------------------------------------------------------------------------
// Sharded matvec
// ---------------------------------------------------------------------------

namespace {

// Lockstep overlap events for one sharded linear on k devices: round 0 is
// compute only; in round j the j-th transfer runs beside the j-th compute.
void emit_matvec_events(mesh::Timeline* timeline, const std::string& tag, int64_t k,
                        double tm, double tc, double comm_floats,
                        double flops_per_chunk) {
  if (!timeline || k == 1) return;
  double boundary = tm;
  for (int64_t d = 0; d < k; ++d)
    timeline->device(0, d).events.push_back(
        {mesh::EventKind::compute, 0.0, tm, flops_per_chunk, tag + "/round0"});
  for (int64_t j = 1; j < k; ++j) {
    double window = std::max(tc, tm);
    for (int64_t d = 0; d < k; ++d) {
      std::string rtag = tag + "/round" + std::to_string(j) + "/from" + std::to_string(d);
      timeline->device(0, d).events.push_back(
          {mesh::EventKind::compute, boundary, boundary + tm, flops_per_chunk,
           tag + "/round" + std::to_string(j)});
      timeline->device(0, d).events.push_back(
          {mesh::EventKind::send, boundary, boundary + tc, comm_floats, rtag});
      timeline->device(0, (d + 1) % k)
          .events.push_back(
              {mesh::EventKind::recv, boundary, boundary + tc, comm_floats, rtag});
    }
    boundary += window;
  }
}

}  // namespace

std::pair<ShardedVector, mesh::CollectiveReport> row_sharded_matvec(
    const ShardedMatrix& a, const ShardedVector& x, const mesh::MeshConfig& mesh_cfg,
    mesh::Timeline* timeline, const std::string& tag) {
  mesh_cfg.validate();
  require(a.mode == ShardMode::row, ErrorKind::contract,
          "row_sharded_matvec needs a row-sharded matrix");
  require(x.space == Space::input, ErrorKind::contract,
          "row_sharded_matvec input must live in the input space");
  const int64_t k = mesh_cfg.k;
  require(static_cast<int64_t>(a.blocks.size()) == k && x.k() == k,
          ErrorKind::contract, "matrix/vector sharded over a different k");
  require(a.n % k == 0 && x.blocks[0].rows() == a.n / k, ErrorKind::dimension,
          "input chunk extent mismatch");

  const int64_t nk = a.n / k;
  const int64_t cols = x.cols();
  ShardedVector y;
  y.space = Space::output;
  for (int64_t i = 0; i < k; ++i) {
    // Accumulate chunk products in ring arrival order: own chunk first,
    // then the neighbours' as they come in.
    Tensor acc;
    for (int64_t step = 0; step < k; ++step) {
      int64_t j = ((i - step) % k + k) % k;
      Tensor aij = slice_cols(a.blocks[i], j * nk, (j + 1) * nk);
      Tensor prod = matmul(aij, x.blocks[j]);
      acc = step == 0 ? std::move(prod) : add(acc, prod);
    }
    y.blocks.push_back(std::move(acc));
  }

  mesh::CollectiveReport report;
  report.rounds = k - 1;
  report.per_device_comm_floats = (k - 1) * nk * cols;
  report.overlapped = true;
  double tc = static_cast<double>(nk * cols) / mesh_cfg.link_bandwidth;
  double flops_chunk = 2.0 * static_cast<double>(a.m / k) * nk * cols;
  double tm = flops_chunk / mesh_cfg.device_flops;
  report.makespan = k == 1 ? tm : tm + (k - 1) * std::max(tc, tm);
  emit_matvec_events(timeline, tag, k, tm, tc,
                     static_cast<double>(nk * cols), flops_chunk);
  return {std::move(y), report};
}

std::pair<ShardedVector, mesh::CollectiveReport> col_sharded_matvec(
    const ShardedMatrix& a, const ShardedVector& x, const mesh::MeshConfig& mesh_cfg,
    mesh::Timeline* timeline, const std::string& tag) {
  mesh_cfg.validate();
  require(a.mode == ShardMode::column, ErrorKind::contract,
          "col_sharded_matvec needs a column-sharded matrix");
  require(x.space == Space::input, ErrorKind::contract,
          "col_sharded_matvec input must live in the input space");
  const int64_t k = mesh_cfg.k;
  require(static_cast<int64_t>(a.blocks.size()) == k && x.k() == k,
          ErrorKind::contract, "matrix/vector sharded over a different k");
  require(a.m % k == 0 && x.blocks[0].rows() == a.n / k, ErrorKind::dimension,
          "input chunk extent mismatch");

  const int64_t mk = a.m / k;
  const int64_t cols = x.cols();

  // Full-height partials, then ring reduce-scatter in documented order:
  // block b sums contributions from devices b+1, b+2, ..., b (owner last).
  std::vector<Tensor> partials;
  partials.reserve(k);
  for (int64_t i = 0; i < k; ++i) {
    Tensor p = matmul(a.blocks[i], x.blocks[i]);
    if (g_fault == Fault::col_matvec_sign_flip && i == 0 && p.size() > 0)
      p.data[0] = -p.data[0];
    partials.push_back(std::move(p));
  }
  ShardedVector y;
  y.space = Space::output;
  if (k == 1) {
    y.blocks.push_back(std::move(partials[0]));
  } else {
    for (int64_t b = 0; b < k; ++b) {
      Tensor acc = Tensor::zeros({mk, cols});
      for (int64_t step = 1; step <= k; ++step) {
        int64_t j = (b + step) % k;
        const double* src = partials[j].data.data() + b * mk * cols;
        for (int64_t i = 0; i < mk * cols; ++i) acc.data[i] += src[i];
      }
      y.blocks.push_back(std::move(acc));
    }
  }

  mesh::CollectiveReport report;
  report.rounds = k - 1;
  report.per_device_comm_floats = (k - 1) * mk * cols;
  report.overlapped = true;
  double tc = static_cast<double>(mk * cols) / mesh_cfg.link_bandwidth;
  double flops_chunk = 2.0 * static_cast<double>(mk) * (a.n / k) * cols;
  double tm = flops_chunk / mesh_cfg.device_flops;
  report.makespan = k == 1 ? tm : tm + (k - 1) * std::max(tc, tm);
  emit_matvec_events(timeline, tag, k, tm, tc,
                     static_cast<double>(mk * cols), flops_chunk);
  return {std::move(y), report};
}

// ---------------------------------------------------------------------------
// Sharded encoder block
// ---------------------------------------------------------------------------

ShardedBlockParams shard_block_params(const model::BlockParams& bp,
                                      const model::VitConfig& cfg, int64_t k) {
  require(cfg.parallel_block, ErrorKind::contract,
          "fused projections exist only in the parallel block form");
  Tensor w1 = concat_cols({*bp.w_qkv, *bp.w_mlp_in});    // (W, 3W+M)
  Tensor w2 = concat_rows({*bp.w_attn_out, *bp.w_mlp_out});  // (W+M, W)
  Tensor a1 = transpose(w1);  // (3W+M, W): m > n -> row
  Tensor a2 = transpose(w2);  // (W, W+M):  m < n -> column
  require(choose_sharding(a1.rows(), a1.cols()) == ShardMode::row, ErrorKind::contract,
          "fused input projection should be row-sharded");
  require(choose_sharding(a2.rows(), a2.cols()) == ShardMode::column, ErrorKind::contract,
          "fused output projection should be column-sharded");
  ShardedBlockParams sp;
  sp.a1 = shard_matrix(a1, ShardMode::row, k);
  sp.a2 = shard_matrix(a2, ShardMode::column, k);
  return sp;
}

std::pair<ShardedVector, ShardedBlockReport> sharded_block_forward(
    const ShardedVector& x, const model::BlockParams& bp,
    const ShardedBlockParams& sp, const model::VitConfig& cfg,
    const mesh::MeshConfig& mesh_cfg, ShardedBlockTrace* trace,
    mesh::Timeline* timeline, const std::string& tag) {
  require(cfg.parallel_block, ErrorKind::contract,
          "sharded_block_forward requires the parallel block form");
  const int64_t k = mesh_cfg.k, w = cfg.width, m = cfg.mlp_dim;
  require(x.k() == k && w % k == 0 && (3 * w + m) % k == 0 && (w + m) % k == 0,
          ErrorKind::dimension, "extents not divisible by k");
  const int64_t cols = x.cols();

  // Shared pre-norm. The row statistic needs the full row; the scalar
  // mean-square exchange is not charged (the cost model covers the linear
  // payloads). Chunks are normalized in place against the full rows.
  Tensor x_rows = transpose(x.assemble());                   // (S, W)
  Tensor normed_rows = rms_norm(x_rows, *bp.ln_gain);        // (S, W)
  ShardedVector normed = shard_vector(transpose(normed_rows), k, Space::input);

  // Fused input projection, row-sharded: hidden chunks per device.
  auto [hidden, row_report] =
      row_sharded_matvec(sp.a1, normed, mesh_cfg, timeline, tag + "/in");

  // Glue: bias on the MLP slice, attention heads, gelu. Runs on assembled
  // rows; identical element order to the unsharded fused path.
  Tensor hidden_rows = transpose(hidden.assemble());  // (S, 3W+M)
  Tensor bias1 = Tensor::zeros({3 * w + m});
  for (int64_t i = 0; i < m; ++i) bias1.data[3 * w + i] = bp.b_mlp_in->data[i];
  hidden_rows = add_bias_rows(hidden_rows, bias1);
  Tensor q = slice_cols(hidden_rows, 0, w);
  Tensor kk = slice_cols(hidden_rows, w, 2 * w);
  Tensor v = slice_cols(hidden_rows, 2 * w, 3 * w);
  Tensor mlp_pre = slice_cols(hidden_rows, 3 * w, 3 * w + m);
  auto core = model::detail::attention_core(q, kk, v, cfg.num_heads, cfg.head_dim(),
                                            cfg.qk_norm, bp.q_gain, bp.k_gain);
  Tensor z_rows = concat_cols({core.concat, gelu(mlp_pre)});  // (S, W+M)
  ShardedVector z = shard_vector(transpose(z_rows), k, Space::input);

  // Fused output projection, column-sharded.
  auto [out, col_report] =
      col_sharded_matvec(sp.a2, z, mesh_cfg, timeline, tag + "/out");

  // Residual + fused output bias, chunk-local.
  ShardedVector y;
  y.space = Space::input;  // width-space chunks feed the next block
  const int64_t wk = w / k;
  for (int64_t i = 0; i < k; ++i) {
    Tensor yi = Tensor::zeros({wk, cols});
    for (int64_t r = 0; r < wk; ++r) {
      double b = bp.out_bias->data[i * wk + r];
      for (int64_t c = 0; c < cols; ++c)
        yi.at(r, c) = (x.blocks[i].at(r, c) + out.blocks[i].at(r, c)) + b;
    }
    y.blocks.push_back(std::move(yi));
  }

  ShardedBlockReport report;
  report.row_comm_floats_per_col = (k - 1) * (w / k);
  report.col_comm_floats_per_col = (k - 1) * (w / k);
  report.comm_floats_total =
      row_report.per_device_comm_floats + col_report.per_device_comm_floats;
  report.activation_floats_per_col = (3 * w + m) / k + w / k;
  report.overlapped_makespan = row_report.makespan + col_report.makespan;
  {
    double tc1 = static_cast<double>((w / k) * cols) / mesh_cfg.link_bandwidth;
    double tm1 = 2.0 * static_cast<double>((3 * w + m) / k) * (w / k) * cols /
                 mesh_cfg.device_flops;
    double tc2 = tc1;
    double tm2 = 2.0 * static_cast<double>(w / k) * ((w + m) / k) * cols /
                 mesh_cfg.device_flops;
    report.non_overlapped_makespan =
        k * tm1 + (k - 1) * tc1 + k * tm2 + (k - 1) * tc2;
  }

  if (trace) {
    trace->x = x;
    trace->normed_rows = std::move(normed_rows);
    trace->hidden_rows = std::move(hidden_rows);
    trace->q = std::move(q);
    trace->k = std::move(kk);
    trace->v = std::move(v);
    trace->qn = std::move(core.qn);
    trace->kn = std::move(core.kn);
    trace->attn = std::move(core.state);
    trace->attn_concat = std::move(core.concat);
    trace->mlp_pre = std::move(mlp_pre);
    trace->z_rows = std::move(z_rows);
    trace->z = std::move(z);
  }
  return {std::move(y), report};
}

ShardedBlockGrads sharded_block_backward(const ShardedBlockTrace& trace,
                                         const model::BlockParams& bp,
                                         const ShardedBlockParams& sp,
                                         const model::VitConfig& cfg,
                                         const ShardedVector& dy,
                                         const mesh::MeshConfig& mesh_cfg) {
  const int64_t k = mesh_cfg.k, w = cfg.width, m = cfg.mlp_dim;
  const int64_t wk = w / k;
  ShardedBlockGrads g;

  // Residual split: dy flows to x directly and into the fused output linear.
  // out_bias gradient is the per-row sum over columns, chunk-local.
  g.dout_bias = Tensor::zeros({w});
  for (int64_t i = 0; i < k; ++i)
    for (int64_t r = 0; r < wk; ++r)
      for (int64_t c = 0; c < dy.blocks[i].cols(); ++c)
        g.dout_bias.data[i * wk + r] += dy.blocks[i].at(r, c);

  // Column-linear backward: dz_i = A2_i^T dY (dY all-gathered, the dual of
  // the forward reduce-scatter), dA2_i = dY z_i^T device-local.
  Tensor dy_full = dy.assemble();  // (W, S)
  int64_t cols = dy_full.cols();
  Tensor da2_full = Tensor::zeros({w, w + m});
  ShardedVector dz;
  dz.space = Space::input;
  for (int64_t i = 0; i < k; ++i) {
    dz.blocks.push_back(matmul(transpose(sp.a2.blocks[i]), dy_full));
    Tensor da2_i = matmul(dy_full, transpose(trace.z.blocks[i]));
    for (int64_t r = 0; r < w; ++r)
      for (int64_t c = 0; c < (w + m) / k; ++c)
        da2_full.at(r, i * ((w + m) / k) + c) = da2_i.at(r, c);
  }
  g.comm_floats_total += (k - 1) * wk * cols;  // dY all-gather

  // Glue backward on assembled rows.
  Tensor dz_rows = transpose(dz.assemble());  // (S, W+M)
  Tensor d_concat = slice_cols(dz_rows, 0, w);
  Tensor d_gelu_out = slice_cols(dz_rows, w, w + m);
  Tensor dmlp_pre = gelu_backward(trace.mlp_pre, d_gelu_out);

  auto ag = model::detail::attention_core_backward(
      trace.qn, trace.kn, trace.v, trace.attn, d_concat, cfg.num_heads, cfg.head_dim());
  Tensor dq, dk;
  g.dq_gain = Tensor::zeros(bp.q_gain->shape);
  g.dk_gain = Tensor::zeros(bp.k_gain->shape);
  if (cfg.qk_norm) {
    model::detail::qk_norm_backward(trace.q, *bp.q_gain, ag.dqn, cfg.num_heads,
                                    cfg.head_dim(), &dq, &g.dq_gain);
    model::detail::qk_norm_backward(trace.k, *bp.k_gain, ag.dkn, cfg.num_heads,
                                    cfg.head_dim(), &dk, &g.dk_gain);
  } else {
    dq = ag.dqn;
    dk = ag.dkn;
  }
  Tensor dhidden_rows = concat_cols({dq, dk, ag.dv, dmlp_pre});  // (S, 3W+M)
  g.db_mlp_in = col_sum(dmlp_pre);

  // Row-linear backward: full-height partials (A1_i^T dH_i) reduce-scatter
  // back to width chunks (the dual of the forward all-gather).
  Tensor dhidden_fm = transpose(dhidden_rows);  // (3W+M, S)
  const int64_t hk = (3 * w + m) / k;
  Tensor da1_full = Tensor::zeros({3 * w + m, w});
  std::vector<Tensor> partials;
  partials.reserve(k);
  for (int64_t i = 0; i < k; ++i) {
    Tensor dh_i = slice_rows(dhidden_fm, i * hk, (i + 1) * hk);
    partials.push_back(matmul(transpose(sp.a1.blocks[i]), dh_i));  // (W, S)
    Tensor da1_i = matmul(dh_i, trace.normed_rows);  // dH_i (hk,S) x X^T (S,W)
    for (int64_t r = 0; r < hk; ++r)
      for (int64_t c = 0; c < w; ++c) da1_full.at(i * hk + r, c) = da1_i.at(r, c);
  }
  Tensor dnormed_fm = Tensor::zeros({w, cols});
  for (int64_t b = 0; b < k; ++b) {
    for (int64_t step = 1; step <= k; ++step) {
      int64_t j = (b + step) % k;
      for (int64_t r = 0; r < wk; ++r)
        for (int64_t c = 0; c < cols; ++c)
          dnormed_fm.at(b * wk + r, c) += partials[j].at(b * wk + r, c);
    }
  }
  g.comm_floats_total += (k - 1) * wk * cols;  // partial reduce-scatter

  // Pre-norm backward and the residual join, then back to chunks.
  RmsNormGrads rn = rms_norm_backward(transpose(trace.x.assemble()), *bp.ln_gain,
                                      transpose(dnormed_fm));
  g.dln_gain = std::move(rn.dgain);
  Tensor dx_fm = transpose(rn.dx);  // (W, S)
  g.dx.space = Space::input;
  for (int64_t i = 0; i < k; ++i) {
    Tensor dxi = slice_rows(dx_fm, i * wk, (i + 1) * wk);
    g.dx.blocks.push_back(add(dxi, dy.blocks[i]));
  }

  // Unfuse the weight gradients back onto the parameter tensors.
  Tensor dw1 = transpose(da1_full);  // (W, 3W+M)
  g.dw_qkv = slice_cols(dw1, 0, 3 * w);
  g.dw_mlp_in = slice_cols(dw1, 3 * w, 3 * w + m);
  Tensor dw2 = transpose(da2_full);  // (W+M, W)
  g.dw_attn_out = slice_rows(dw2, 0, w);
  g.dw_mlp_out = slice_rows(dw2, w, w + m);
  return g;
}

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

ShardedParamStore::ShardedParamStore(const model::VitParams& params,
                                     const mesh::MeshConfig& mesh_cfg,
                                     const ShardPolicy& policy)
    : mesh_(mesh_cfg) {
  mesh_.validate();
  const int64_t t = mesh_.t;
  for (size_t i = 0; i < params.names.size(); ++i) {
    Entry e;
    e.name = params.names[i];
    e.shape = params.tensors[i].shape;
    const Tensor& tensor = params.tensors[i];
    if (t > 1 && tensor.size() >= policy.min_floats_to_shard) {
      e.sharded = true;
      ++sharded_count_;
      // Flat contiguous split; the last chunk absorbs the remainder.
      int64_t base = tensor.size() / t;
      int64_t off = 0;
      for (int64_t r = 0; r < t; ++r) {
        int64_t len = r == t - 1 ? tensor.size() - off : base;
        Tensor chunk = Tensor::zeros({len});
        std::copy(tensor.data.begin() + off, tensor.data.begin() + off + len,
                  chunk.data.begin());
        off += len;
        e.chunks.push_back(std::move(chunk));
      }
    } else {
      e.chunks = {tensor};
    }
    entries_.push_back(std::move(e));
  }
}

const ShardedParamStore::Entry& ShardedParamStore::entry(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return e;
  fail(ErrorKind::state, "unknown tensor in param store: " + name);
}

bool ShardedParamStore::is_sharded(const std::string& name) const {
  return entry(name).sharded;
}

Tensor ShardedParamStore::gather(const std::string& name) const {
  const Entry& e = entry(name);
  if (!e.sharded) return e.chunks[0];
  Tensor out = Tensor::zeros(e.shape);
  int64_t off = 0;
  for (const Tensor& c : e.chunks) {
    std::copy(c.data.begin(), c.data.end(), out.data.begin() + off);
    off += c.size();
  }
  return out;
}

const std::vector<Tensor>& ShardedParamStore::chunks(const std::string& name) const {
  return entry(name).chunks;
}

int64_t ShardedParamStore::gather_floats_per_device(const std::string& name) const {
  const Entry& e = entry(name);
  if (!e.sharded) return 0;
  int64_t total = Tensor::count(e.shape);
  return total - total / mesh_.t;  // everything except the own chunk
}

std::vector<Tensor> ShardedParamStore::scatter_reduce_grad(
    const std::string& name, const std::vector<Tensor>& replica_grads) const {
  const Entry& e = entry(name);
  require(static_cast<int64_t>(replica_grads.size()) == mesh_.t, ErrorKind::contract,
          "one replica gradient per data-parallel row expected");
  for (const Tensor& r : replica_grads)
    require(r.shape == e.shape, ErrorKind::dimension, "replica gradient shape mismatch");
  std::vector<Tensor> out;
  int64_t off = 0;
  for (int64_t owner = 0; owner < static_cast<int64_t>(e.chunks.size()); ++owner) {
    int64_t len = e.chunks[owner].size();
    Tensor acc = Tensor::zeros({len});
    // Ring order from the owner's successor, owner last.
    for (int64_t step = 1; step <= mesh_.t; ++step) {
      int64_t j = (owner + step) % mesh_.t;
      const Tensor& src = e.sharded ? replica_grads[j] : replica_grads[0];
      for (int64_t i = 0; i < len; ++i) acc.data[i] += src.data[off + i];
      if (!e.sharded) break;
    }
    out.push_back(std::move(acc));
    off += len;
  }
  return out;
}

PrefetchSchedule prefetch_forward_schedule(const std::vector<int64_t>& layer_gather_floats,
                                           const std::vector<double>& layer_flops,
                                           const mesh::MeshConfig& mesh_cfg) {
  mesh_cfg.validate();
  require(layer_gather_floats.size() == layer_flops.size(), ErrorKind::dimension,
          "per-layer inputs must align");
  const int64_t t = mesh_cfg.t;
  const size_t layers = layer_flops.size();
  PrefetchSchedule sched;
  sched.gather_start.resize(layers);
  sched.gather_end.resize(layers);
  sched.compute_start.resize(layers);
  sched.compute_end.resize(layers);

  double gather_free = 0.0, compute_free = 0.0;
  for (size_t l = 0; l < layers; ++l) {
    double gdur = static_cast<double>(layer_gather_floats[l]) / mesh_cfg.link_bandwidth;
    // The gather for layer l starts once the channel is free and, past layer
    // 0, once the previous layer's compute has begun ("while computing one
    // layer... start communicating the weights of the next one").
    double gstart = l == 0 ? 0.0 : std::max(gather_free, sched.compute_start[l - 1]);
    sched.gather_start[l] = gstart;
    sched.gather_end[l] = gstart + gdur;
    gather_free = sched.gather_end[l];

    double cstart = std::max(compute_free, sched.gather_end[l]);
    sched.compute_start[l] = cstart;
    sched.compute_end[l] = cstart + layer_flops[l] / mesh_cfg.device_flops;
    compute_free = sched.compute_end[l];
  }
  sched.makespan = compute_free;

  // Events for the t devices of one model column (all rows share the clock).
  for (size_t l = 0; l < layers; ++l) {
    std::string ltag = "layer" + std::to_string(l);
    for (int64_t r = 0; r < t; ++r) {
      sched.timeline.device(r, 0).events.push_back(
          {mesh::EventKind::compute, sched.compute_start[l], sched.compute_end[l],
           layer_flops[l], ltag + "/compute"});
      if (layer_gather_floats[l] > 0 && t > 1) {
        // One ring round per peer chunk inside the gather window.
        double round = (sched.gather_end[l] - sched.gather_start[l]) / (t - 1);
        double per_round_floats =
            static_cast<double>(layer_gather_floats[l]) / (t - 1);
        for (int64_t s = 0; s < t - 1; ++s) {
          std::string tag = ltag + "/gather/round" + std::to_string(s) + "/from" +
                            std::to_string(r);
          sched.timeline.device(r, 0).events.push_back(
              {mesh::EventKind::send, sched.gather_start[l] + s * round,
               sched.gather_start[l] + (s + 1) * round, per_round_floats, tag});
          sched.timeline.device((r + 1) % t, 0).events.push_back(
              {mesh::EventKind::recv, sched.gather_start[l] + s * round,
               sched.gather_start[l] + (s + 1) * round, per_round_floats, tag});
        }
      }
    }
  }
  return sched;
}

}  // namespace meshvit::shard
