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

#include "mesh.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace meshvit::shard {

// ---------------------------------------------------------------------------
// Sharded containers for y = A x semantics, A in R^{m x n}
// ---------------------------------------------------------------------------

enum class ShardMode { replicated, row, column };
const char* shard_mode_name(ShardMode m);

struct ShardedMatrix {
  int64_t m = 0;
  int64_t n = 0;
  ShardMode mode = ShardMode::replicated;
  std::vector<Tensor> blocks;  // row: k x (m/k, n); column: k x (m, n/k)

  Tensor assemble() const;  // exact reconstruction
};

ShardedMatrix shard_matrix(const Tensor& a, ShardMode mode, int64_t k);

enum class Space { input, output };

// Batched columns: each block is (len/k, cols); cols = 1 recovers the plain
// vector case, larger cols treats tokens as independent matvec columns.
struct ShardedVector {
  Space space = Space::input;
  std::vector<Tensor> blocks;

  int64_t k() const { return static_cast<int64_t>(blocks.size()); }
  int64_t cols() const { return blocks.at(0).cols(); }
  Tensor assemble() const;  // concatenated blocks in device order
};

ShardedVector shard_vector(const Tensor& x, int64_t k, Space space);

// ---------------------------------------------------------------------------
// Sharded linear operations
// ---------------------------------------------------------------------------

// Device i holds rows block A_{i,:}; the input is ring-all-gathered
// ((k-1)(n/k) floats per device per column) and y_i accumulates chunk
// products in ring arrival order: j = i, i-1, ..., i-k+1 (mod k).
std::pair<ShardedVector, mesh::CollectiveReport> row_sharded_matvec(
    const ShardedMatrix& a, const ShardedVector& x, const mesh::MeshConfig& mesh_cfg,
    mesh::Timeline* timeline = nullptr, const std::string& tag = "rowmv");

// Device i holds columns block A_{:,i} and computes the full-height partial
// A_{:,i} x_i; partials are ring-reduce-scattered ((k-1)(m/k) floats per
// device per column) leaving y_j on device j.
std::pair<ShardedVector, mesh::CollectiveReport> col_sharded_matvec(
    const ShardedMatrix& a, const ShardedVector& x, const mesh::MeshConfig& mesh_cfg,
    mesh::Timeline* timeline = nullptr, const std::string& tag = "colmv");

// Column mode exactly when the output space is smaller (m < n); row
// elsewhere, including the m == n tie.
ShardMode choose_sharding(int64_t m, int64_t n);

// ---------------------------------------------------------------------------
// Sharded encoder block (fused projections)
// ---------------------------------------------------------------------------

// Pre-sharded fused projections for one block:
//   a1 = [w_qkv | w_mlp_in]^T, (3W+M, W), row-sharded;
//   a2 = [w_attn_out ; w_mlp_out]^T, (W, W+M), column-sharded.
struct ShardedBlockParams {
  ShardedMatrix a1;
  ShardedMatrix a2;
};
ShardedBlockParams shard_block_params(const model::BlockParams& bp,
                                      const model::VitConfig& cfg, int64_t k);

struct ShardedBlockReport {
  int64_t row_comm_floats_per_col = 0;  // (k-1)(W/k)
  int64_t col_comm_floats_per_col = 0;  // (k-1)(W/k)
  int64_t comm_floats_total = 0;        // both linears, all columns
  // Linear outputs held per device, per column: (3W+M)/k + W/k; the
  // unsharded block holds the full (3W+M) + W.
  int64_t activation_floats_per_col = 0;
  double overlapped_makespan = 0.0;
  double non_overlapped_makespan = 0.0;
};

// Retained values for the sharded backward pass.
struct ShardedBlockTrace {
  ShardedVector x;        // block input chunks (W/k, S)
  Tensor normed_rows;     // (S, W) shared pre-norm, assembled
  Tensor hidden_rows;     // (S, 3W+M) post-bias fused hidden, assembled
  Tensor q, k, v;         // (S, W) raw slices
  Tensor qn, kn;          // normalized (equal to q, k when !qk_norm)
  model::AttentionState attn;
  Tensor attn_concat;     // (S, W)
  Tensor mlp_pre;         // (S, M)
  Tensor z_rows;          // (S, W+M) second fused input
  ShardedVector z;        // feature-major chunks ((W+M)/k, S)
};

// The full parallel block with fused projections computed through sharded
// linears. Activations enter and leave sharded over the width axis; the
// attention/gelu/norm glue runs on assembled values (the cost accounting
// covers the linear payloads, matching the (k-1)-volume formulas).
// With k = 1 the result is bit-identical to model::fused_forward.
std::pair<ShardedVector, ShardedBlockReport> sharded_block_forward(
    const ShardedVector& x, const model::BlockParams& bp,
    const ShardedBlockParams& sp, const model::VitConfig& cfg,
    const mesh::MeshConfig& mesh_cfg, ShardedBlockTrace* trace = nullptr,
    mesh::Timeline* timeline = nullptr, const std::string& tag = "block");

// Gradients of one sharded block. Linear gradients follow the forward's
// transpose structure (all-gather <-> reduce-scatter duality); glue
// gradients are computed on the assembled retained values.
struct ShardedBlockGrads {
  ShardedVector dx;
  Tensor dw_qkv, dq_gain, dk_gain, dw_attn_out;
  Tensor dw_mlp_in, db_mlp_in, dw_mlp_out, dout_bias, dln_gain;
  int64_t comm_floats_total = 0;
};
ShardedBlockGrads sharded_block_backward(const ShardedBlockTrace& trace,
                                         const model::BlockParams& bp,
                                         const ShardedBlockParams& sp,
                                         const model::VitConfig& cfg,
                                         const ShardedVector& dy,
                                         const mesh::MeshConfig& mesh_cfg);

// ---------------------------------------------------------------------------
// Parameter sharding over the data axis (t) with prefetch
// ---------------------------------------------------------------------------

struct ShardPolicy {
  int64_t min_floats_to_shard = int64_t{1} << 20;
};

// Tensors at or above the policy threshold are flat-split into t contiguous
// chunks, one per data-parallel row. Gathers reassemble bit-identically;
// gradients reduce back to owner chunks in ring order.
class ShardedParamStore {
 public:
  ShardedParamStore(const model::VitParams& params, const mesh::MeshConfig& mesh_cfg,
                    const ShardPolicy& policy);

  bool is_sharded(const std::string& name) const;
  // True when the policy sharded nothing: the store is valid but degenerate.
  bool degenerate_replicated() const { return sharded_count_ == 0; }
  int64_t sharded_count() const { return sharded_count_; }

  Tensor gather(const std::string& name) const;  // bit-identical round trip
  const std::vector<Tensor>& chunks(const std::string& name) const;
  // Floats one device receives to gather this tensor (0 when replicated).
  int64_t gather_floats_per_device(const std::string& name) const;

  // Data-parallel gradient handling for a sharded tensor: each of the t
  // replicas contributes a full gradient; owner chunks receive the ring-order
  // sum of their slice.
  std::vector<Tensor> scatter_reduce_grad(const std::string& name,
                                          const std::vector<Tensor>& replica_grads) const;

  const mesh::MeshConfig& mesh_config() const { return mesh_; }

 private:
  struct Entry {
    std::string name;
    std::vector<int64_t> shape;
    bool sharded = false;
    std::vector<Tensor> chunks;  // flat chunks if sharded, whole tensor if not
  };
  const Entry& entry(const std::string& name) const;

  mesh::MeshConfig mesh_;
  std::vector<Entry> entries_;
  int64_t sharded_count_ = 0;
};

// Forward schedule with weight prefetch: the gather for layer l+1 starts once
// the gather channel is free and layer l has started computing; layer l+1's
// compute waits for both its gather and the previous compute. Emits gather
// ring rounds and compute events for the t devices of one model column.
struct PrefetchSchedule {
  mesh::Timeline timeline;
  std::vector<double> gather_start, gather_end;
  std::vector<double> compute_start, compute_end;
  double makespan = 0.0;
};
PrefetchSchedule prefetch_forward_schedule(const std::vector<int64_t>& layer_gather_floats,
                                           const std::vector<double>& layer_flops,
                                           const mesh::MeshConfig& mesh_cfg);

// Test hooks: fault injection for the verification suites.
enum class Fault { none, col_matvec_sign_flip };
void set_test_fault(Fault f);
Fault test_fault();

}  // namespace meshvit::shard
