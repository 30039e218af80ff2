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

// Hand-written reverse pass for the whole model. Each section mirrors the
// forward in model.cpp; the structure is kept 1:1 with the retained traces
// so the finite-difference suite pins every term.

#include <cmath>

#include "model.hpp"

namespace meshvit::model {

namespace detail {

// Per-head attention backward shared by the encoder blocks and the MAP head.
// Inputs are the retained (already normalized) q/k plus raw v and the
// softmax weights; returns gradients w.r.t. the normalized q/k and v.
AttnCoreGrads attention_core_backward(const Tensor& qn, const Tensor& kn,
                                      const Tensor& v, const AttentionState& state,
                                      const Tensor& d_concat, int64_t heads,
                                      int64_t head_dim) {
  const int64_t sq = qn.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
  AttnCoreGrads g;
  g.dqn = Tensor::zeros(qn.shape);
  g.dkn = Tensor::zeros(kn.shape);
  g.dv = Tensor::zeros(v.shape);
  for (int64_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(qn, h * head_dim, (h + 1) * head_dim);
    Tensor kh = slice_cols(kn, h * head_dim, (h + 1) * head_dim);
    Tensor vh = slice_cols(v, h * head_dim, (h + 1) * head_dim);
    Tensor wh = slice_rows(state.weights, h * sq, (h + 1) * sq);
    Tensor doh = slice_cols(d_concat, h * head_dim, (h + 1) * head_dim);
    Tensor dwh = matmul(doh, transpose(vh));
    Tensor dvh = matmul(transpose(wh), doh);
    Tensor dlogits = scale(softmax_backward(wh, dwh), inv_sqrt_d);
    Tensor dqh = matmul(dlogits, kh);
    Tensor dkh = matmul(transpose(dlogits), qh);
    accumulate_cols(g.dqn, dqh, h * head_dim);
    accumulate_cols(g.dkn, dkh, h * head_dim);
    accumulate_cols(g.dv, dvh, h * head_dim);
  }
  return g;
}

// Undo the per-head QK normalization: maps d(qn) back to d(q) and the gain.
// dgain_out must be pre-shaped (heads, head_dim); contributions accumulate.
void qk_norm_backward(const Tensor& q_raw, const Tensor& gain, const Tensor& dqn,
                      int64_t heads, int64_t head_dim, Tensor* dq_out,
                      Tensor* dgain_out) {
  *dq_out = Tensor::zeros(q_raw.shape);
  for (int64_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q_raw, h * head_dim, (h + 1) * head_dim);
    Tensor gh = slice_rows(gain, h, h + 1);
    gh.shape = {head_dim};
    Tensor dnh = slice_cols(dqn, h * head_dim, (h + 1) * head_dim);
    RmsNormGrads rg = rms_norm_backward(qh, gh, dnh);
    accumulate_cols(*dq_out, rg.dx, h * head_dim);
    for (int64_t j = 0; j < head_dim; ++j) dgain_out->at(h, j) += rg.dgain.data[j];
  }
}

}  // namespace detail

namespace {

using detail::attention_core_backward;
using detail::AttnCoreGrads;
using detail::qk_norm_backward;

// Reverse of block_forward_trace + block_trace_output; returns dx.
Tensor block_backward(const BlockTrace& tr, const BlockParams& bp,
                      const VitConfig& cfg, const Tensor& dy,
                      VitParams& grads, const std::string& prefix) {
  // y = x + mlp_act*w_mlp_out + attn_concat*w_attn_out + out_bias
  axpy(grads[prefix + "out_bias"], 1.0, col_sum(dy));

  // MLP branch
  Tensor dmlp_act = matmul(dy, transpose(*bp.w_mlp_out));
  axpy(grads[prefix + "w_mlp_out"], 1.0, matmul(transpose(tr.mlp_act), dy));
  Tensor dmlp_pre = gelu_backward(tr.mlp_pre, dmlp_act);
  axpy(grads[prefix + "w_mlp_in"], 1.0, matmul(transpose(tr.normed), dmlp_pre));
  axpy(grads[prefix + "b_mlp_in"], 1.0, col_sum(dmlp_pre));
  Tensor dnormed = matmul(dmlp_pre, transpose(*bp.w_mlp_in));

  // Attention branch
  Tensor d_concat = matmul(dy, transpose(*bp.w_attn_out));
  axpy(grads[prefix + "w_attn_out"], 1.0, matmul(transpose(tr.attn_concat), dy));
  AttnCoreGrads ag = attention_core_backward(tr.qn, tr.kn, tr.v, tr.attn, d_concat,
                                             cfg.num_heads, cfg.head_dim());
  Tensor dq, dk;
  if (cfg.qk_norm) {
    qk_norm_backward(tr.q, *bp.q_gain, ag.dqn, cfg.num_heads, cfg.head_dim(), &dq,
                     &grads[prefix + "q_gain"]);
    qk_norm_backward(tr.k, *bp.k_gain, ag.dkn, cfg.num_heads, cfg.head_dim(), &dk,
                     &grads[prefix + "k_gain"]);
  } else {
    dq = ag.dqn;
    dk = ag.dkn;
  }
  Tensor dqkv = concat_cols({dq, dk, ag.dv});
  axpy(grads[prefix + "w_qkv"], 1.0, matmul(transpose(tr.normed), dqkv));
  dnormed = add(dnormed, matmul(dqkv, transpose(*bp.w_qkv)));

  // Shared pre-norm
  RmsNormGrads rg = rms_norm_backward(tr.x_in, *bp.ln_gain, dnormed);
  axpy(grads[prefix + "ln_gain"], 1.0, rg.dgain);
  return add(dy, rg.dx);  // residual path + norm path
}

}  // namespace

namespace detail {

// Reverse of map_head_trace; returns d(tokens).
Tensor map_backward(const MapTrace& tr, const VitParams& p, const VitConfig& cfg,
                    const Tensor& dpooled, VitParams& grads) {
  const int64_t w = cfg.width;
  RmsNormGrads final_g = rms_norm_backward(tr.h2, p["map/final_gain"], dpooled);
  axpy(grads["map/final_gain"], 1.0, final_g.dgain);
  Tensor dh2 = final_g.dx;

  // h2 = h1 + mlp_act*w_mlp_out + b_mlp_out
  Tensor dh1 = dh2;
  axpy(grads["map/b_mlp_out"], 1.0, col_sum(dh2));
  axpy(grads["map/w_mlp_out"], 1.0, matmul(transpose(tr.mlp_act), dh2));
  Tensor dmlp_pre = gelu_backward(tr.mlp_pre, matmul(dh2, transpose(p["map/w_mlp_out"])));
  axpy(grads["map/w_mlp_in"], 1.0, matmul(transpose(tr.h1n), dmlp_pre));
  axpy(grads["map/b_mlp_in"], 1.0, col_sum(dmlp_pre));
  RmsNormGrads ln_g = rms_norm_backward(tr.h1, p["map/ln_gain"],
                                        matmul(dmlp_pre, transpose(p["map/w_mlp_in"])));
  axpy(grads["map/ln_gain"], 1.0, ln_g.dgain);
  dh1 = add(dh1, ln_g.dx);

  // h1 = probe + attn_concat*w_out
  Tensor dprobe = dh1;
  axpy(grads["map/w_out"], 1.0, matmul(transpose(tr.attn_concat), dh1));
  Tensor d_concat = matmul(dh1, transpose(p["map/w_out"]));
  AttnCoreGrads ag = attention_core_backward(tr.q, tr.k, tr.v, tr.attn, d_concat,
                                             cfg.num_heads, cfg.head_dim());
  const Tensor& wqkv = p["map/w_qkv"];
  Tensor wq = slice_cols(wqkv, 0, w);
  Tensor wk = slice_cols(wqkv, w, 2 * w);
  Tensor wv = slice_cols(wqkv, 2 * w, 3 * w);
  dprobe = add(dprobe, matmul(ag.dqn, transpose(wq)));
  Tensor dtokens = add(matmul(ag.dkn, transpose(wk)), matmul(ag.dv, transpose(wv)));
  Tensor& dwqkv = grads["map/w_qkv"];
  accumulate_cols(dwqkv, matmul(transpose(p["map/probe"]), ag.dqn), 0);
  accumulate_cols(dwqkv, matmul(transpose(tr.tokens), ag.dkn), w);
  accumulate_cols(dwqkv, matmul(transpose(tr.tokens), ag.dv), 2 * w);
  axpy(grads["map/probe"], 1.0, dprobe);
  return dtokens;
}

}  // namespace detail

VitParams model_backward(const Tensor& images, const Tensor& labels,
                         const VitParams& p, const VitConfig& cfg,
                         const ForwardTrace& trace) {
  require(trace.blocks.size() == static_cast<size_t>(images.rows()),
          ErrorKind::state, "model_backward: trace does not match batch");
  VitParams grads = zeros_like(p);
  Tensor dlogits = sigmoid_xent_backward(trace.logits, labels);
  for (int64_t b = 0; b < images.rows(); ++b) {
    const MapTrace& head = trace.heads[b];
    Tensor dl = slice_rows(dlogits, b, b + 1);
    axpy(grads["classifier/w"], 1.0, matmul(transpose(head.pooled), dl));
    axpy(grads["classifier/b"], 1.0, col_sum(dl));
    Tensor dpooled = matmul(dl, transpose(p["classifier/w"]));
    Tensor dx = detail::map_backward(head, p, cfg, dpooled, grads);
    for (int64_t l = cfg.depth - 1; l >= 0; --l) {
      BlockParams bp = block_view(p, cfg, l);
      dx = block_backward(trace.blocks[b][l], bp, cfg, dx, grads,
                          block_prefix(l) + "/");
    }
    // Embedding: x0 = patches*W + b + pos
    axpy(grads["pos_embed"], 1.0, dx);
    axpy(grads["patch_embed/w"], 1.0, matmul(transpose(trace.patch_rows[b]), dx));
    axpy(grads["patch_embed/b"], 1.0, col_sum(dx));
  }
  return grads;
}

}  // namespace meshvit::model
