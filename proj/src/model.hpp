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

#include <optional>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace meshvit::model {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct VitConfig {
  int64_t width = 0;      // model dimension
  int64_t depth = 0;      // encoder blocks
  int64_t mlp_dim = 0;    // MLP hidden width
  int64_t num_heads = 0;
  int64_t patch = 14;     // square patch edge, pixels
  int64_t image = 224;    // square image edge, pixels
  int64_t channels = 3;
  int64_t num_classes = 30000;
  bool qk_norm = true;
  bool parallel_block = true;

  int64_t head_dim() const { return width / num_heads; }
  int64_t grid() const { return image / patch; }
  int64_t tokens() const { return grid() * grid(); }
  int64_t patch_dim() const { return patch * patch * channels; }
  // Fused first projection: [w_qkv | w_mlp_in].
  int64_t fused_in_cols() const { return 3 * width + mlp_dim; }
  // Fused second projection input: [attn_heads | mlp_hidden].
  int64_t fused_out_rows() const { return width + mlp_dim; }

  void validate() const;
};

// The three presets from the published architecture table, with the training
// label space (30k classes) and 224px/14px patching.
VitConfig preset_vit_g();
VitConfig preset_vit_e();
VitConfig preset_vit_22b();
std::optional<VitConfig> preset_by_name(const std::string& name);
std::vector<std::string> preset_names();

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// The parameter set is a flat, ordered list of named tensors. The bias
// policy is structural: there are no bias tensors for the QKV projection or
// for any normalization, and the attention out-projection and MLP
// out-projection share one fused output bias per block.
struct ParamSpec {
  std::string name;
  std::vector<int64_t> shape;
  int64_t size() const { return Tensor::count(shape); }
};

// Deterministic schema; drives allocation, counting, checkpoints, sharding
// and weight-decay grouping without materializing any tensor.
std::vector<ParamSpec> param_schema(const VitConfig& cfg);

struct VitParams {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  Tensor& operator[](const std::string& name);
  const Tensor& operator[](const std::string& name) const;
  bool has(const std::string& name) const;
  int64_t total_size() const;
};

// Truncated-normal weights with std 1/sqrt(fan_in), unit gains, zero biases,
// zero classifier kernel. Fully determined by (cfg, rng.seed).
VitParams init_params(const VitConfig& cfg, const Rng& rng);

// Zero-filled gradient container with the same schema.
VitParams zeros_like(const VitParams& p);

// Parameter-count scopes. Table-style reporting uses `body` (blocks plus
// patch/position embeddings): that is the convention the architecture table
// follows for the headline 22B row. `head` is the MAP head plus classifier,
// the same boundary the weight-decay split uses.
enum class CountScope { full, body, head };
int64_t parameter_count(const VitConfig& cfg, CountScope scope = CountScope::full);
bool is_head_param(const std::string& name);
// Shared name-based classification: gains init to 1 and are never decayed;
// biases init to 0 and are never decayed.
bool is_gain_param(const std::string& name);
bool is_bias_param(const std::string& name);

// 2N/6N convention on the body parameters; attention-score FLOPs are
// reported separately since the convention excludes them.
enum class FlopsMode { forward, train };
double flops_per_token(const VitConfig& cfg, FlopsMode mode);
double attention_score_flops_per_token(const VitConfig& cfg, FlopsMode mode);

// ---------------------------------------------------------------------------
// Per-block parameter view
// ---------------------------------------------------------------------------

std::string block_prefix(int64_t layer);

struct BlockParams {
  const Tensor* ln_gain;     // (width)
  const Tensor* ln2_gain;    // (width), sequential mode only, else nullptr
  const Tensor* w_qkv;       // (width, 3*width), no bias
  const Tensor* q_gain;      // (heads, head_dim)
  const Tensor* k_gain;      // (heads, head_dim)
  const Tensor* w_attn_out;  // (width, width), bias fused into out_bias
  const Tensor* w_mlp_in;    // (width, mlp_dim)
  const Tensor* b_mlp_in;    // (mlp_dim)
  const Tensor* w_mlp_out;   // (mlp_dim, width)
  const Tensor* out_bias;    // (width): fused attention-out + MLP-out bias
};
BlockParams block_view(const VitParams& p, const VitConfig& cfg, int64_t layer);
BlockParams block_view(VitParams& p, const VitConfig& cfg, int64_t layer);

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

struct AttentionState {
  Tensor logits;                 // (heads, S, S) flattened as (heads*S, S)
  Tensor weights;                // same layout, rows sum to 1
  std::vector<double> entropy;   // per row, nats
  double max_abs_logit = 0.0;
};

// Upper bound implied by QK normalization:
// max |logit| <= sqrt(head_dim) * max|q_gain| * max|k_gain|.
double qk_logit_bound(const BlockParams& bp, const VitConfig& cfg);

// Multi-head self-attention on an already-normalized input x (S, width).
// With cfg.qk_norm, queries and keys are rms-normalized per head, per token,
// with learned per-head gains, before the scaled dot product.
std::pair<Tensor, AttentionState> qk_attention(const Tensor& x, const BlockParams& bp,
                                               const VitConfig& cfg);

// One encoder block. Parallel form: y = x + MLP(y') + Attention(y') + out_bias
// with y' = rms_norm(x, ln_gain) computed once. Sequential form (two norms,
// two residual adds) is kept for A/B comparisons.
Tensor parallel_block(const Tensor& x, const BlockParams& bp, const VitConfig& cfg,
                      AttentionState* attn_state = nullptr);

// Same function as the parallel block, computed through the two fused
// projections: one matmul against [w_qkv | w_mlp_in] and one against
// [w_attn_out ; w_mlp_out].
Tensor fused_forward(const Tensor& x, const BlockParams& bp, const VitConfig& cfg,
                     AttentionState* attn_state = nullptr);

// Patchify + linear projection + learned 1D position embedding.
Tensor embed(const Tensor& image, const VitParams& p, const VitConfig& cfg);

// Row-major g x g grid resampled to new_grid x new_grid with bilinear,
// aligned-corners interpolation, channel-wise.
Tensor interpolate_pos_embed(const Tensor& pos, int64_t new_grid);

// Multi-head attention pooling: a learned probe token cross-attends over the
// S token representations (no QK norm), followed by a residual MLP sublayer
// and the final norm.
Tensor map_head(const Tensor& tokens, const VitParams& p, const VitConfig& cfg,
                AttentionState* attn_state = nullptr);

// Mean over the batch of sum_c [softplus(logit) - label * logit].
double sigmoid_xent(const Tensor& logits, const Tensor& labels);
Tensor sigmoid_xent_backward(const Tensor& logits, const Tensor& labels);

// ---------------------------------------------------------------------------
// Whole-model forward/backward (replicated execution)
// ---------------------------------------------------------------------------

struct BlockTrace {
  Tensor x_in;         // (S, W)
  Tensor normed;       // y'
  Tensor q, k, v;      // (S, W) row-major slices of the qkv product
  Tensor qn, kn;       // per-head normalized q, k (equal q, k when !qk_norm)
  AttentionState attn;
  Tensor attn_concat;  // (S, W) heads concatenated, before out-projection
  Tensor mlp_pre;      // (S, M) pre-activation
  Tensor mlp_act;      // gelu(mlp_pre)
};

struct MapTrace {
  Tensor tokens;       // (S, W) input to the head
  Tensor q, k, v;      // q: (1, W); k, v: (S, W)
  AttentionState attn;
  Tensor attn_concat;  // (1, W)
  Tensor h1;           // probe + attention output
  Tensor h1n;          // rms_norm(h1, map ln gain)
  Tensor mlp_pre, mlp_act;
  Tensor h2;           // h1 + MLP sublayer output
  Tensor pooled;       // rms_norm(h2, final gain)
};

struct ForwardTrace {
  std::vector<Tensor> patch_rows;   // per image, (tokens, patch_dim)
  std::vector<Tensor> embedded;     // per image, (tokens, W)
  std::vector<std::vector<BlockTrace>> blocks;  // [image][layer]
  std::vector<MapTrace> heads;      // per image
  Tensor logits;                    // (B, num_classes)
  double max_abs_logit = 0.0;       // over all block attentions
  double min_entropy = 0.0;         // over all block attention rows
};

// images: (B, image*image*channels) flattened HWC rows.
ForwardTrace model_forward(const Tensor& images, const VitParams& p, const VitConfig& cfg);

double model_loss(const ForwardTrace& trace, const Tensor& labels);

// Gradient of sigmoid_xent(model(images), labels) w.r.t. every parameter.
VitParams model_backward(const Tensor& images, const Tensor& labels,
                         const VitParams& p, const VitConfig& cfg,
                         const ForwardTrace& trace);

// Internal pieces shared with the sharded execution path, so both paths run
// the exact same attention/norm arithmetic.
namespace detail {

struct AttnCore {
  Tensor concat;
  Tensor qn, kn;
  AttentionState state;
};
AttnCore attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                        int64_t heads, int64_t head_dim, bool qk_norm,
                        const Tensor* q_gain, const Tensor* k_gain);

struct AttnCoreGrads {
  Tensor dqn, dkn, dv;
};
AttnCoreGrads attention_core_backward(const Tensor& qn, const Tensor& kn,
                                      const Tensor& v, const AttentionState& state,
                                      const Tensor& d_concat, int64_t heads,
                                      int64_t head_dim);
void qk_norm_backward(const Tensor& q_raw, const Tensor& gain, const Tensor& dqn,
                      int64_t heads, int64_t head_dim, Tensor* dq_out,
                      Tensor* dgain_out);

Tensor extract_patches(const Tensor& image, const VitConfig& cfg);
MapTrace map_head_trace(const Tensor& tokens, const VitParams& p, const VitConfig& cfg);
BlockTrace block_forward_trace(const Tensor& x, const BlockParams& bp, const VitConfig& cfg);
Tensor block_trace_output(const BlockTrace& tr, const BlockParams& bp);

// Reverse of map_head_trace; accumulates head gradients, returns d(tokens).
Tensor map_backward(const MapTrace& tr, const VitParams& p, const VitConfig& cfg,
                    const Tensor& dpooled, VitParams& grads);

}  // namespace detail

}  // namespace meshvit::model
