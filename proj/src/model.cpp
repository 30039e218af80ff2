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
#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace meshvit::model {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void VitConfig::validate() const {
  require(width > 0 && depth > 0 && mlp_dim > 0 && num_heads > 0,
          ErrorKind::config, "config extents must be positive");
  require(width % num_heads == 0, ErrorKind::config,
          "width must be divisible by num_heads");
  require(patch > 0 && image > 0 && image % patch == 0, ErrorKind::config,
          "image must be divisible by patch");
  require(channels > 0 && num_classes > 0, ErrorKind::config,
          "channels/num_classes must be positive");
}

namespace {
VitConfig table_preset(int64_t width, int64_t depth, int64_t mlp, int64_t heads) {
  VitConfig cfg;
  cfg.width = width;
  cfg.depth = depth;
  cfg.mlp_dim = mlp;
  cfg.num_heads = heads;
  return cfg;  // 14px patches, 224px images, 3 channels, 30k classes
}
}  // namespace

VitConfig preset_vit_g() { return table_preset(1664, 48, 8192, 16); }
VitConfig preset_vit_e() { return table_preset(1792, 56, 15360, 16); }
VitConfig preset_vit_22b() { return table_preset(6144, 48, 24576, 48); }

std::optional<VitConfig> preset_by_name(const std::string& name) {
  if (name == "vit_g") return preset_vit_g();
  if (name == "vit_e") return preset_vit_e();
  if (name == "vit_22b") return preset_vit_22b();
  return std::nullopt;
}

std::vector<std::string> preset_names() { return {"vit_g", "vit_e", "vit_22b"}; }

// ---------------------------------------------------------------------------
// Parameter schema
// ---------------------------------------------------------------------------

std::string block_prefix(int64_t layer) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "block%03d", static_cast<int>(layer));
  return buf;
}

std::vector<ParamSpec> param_schema(const VitConfig& cfg) {
  cfg.validate();
  const int64_t w = cfg.width, m = cfg.mlp_dim, h = cfg.num_heads, d = cfg.head_dim();
  std::vector<ParamSpec> specs;
  specs.push_back({"patch_embed/w", {cfg.patch_dim(), w}});
  specs.push_back({"patch_embed/b", {w}});
  specs.push_back({"pos_embed", {cfg.tokens(), w}});
  for (int64_t l = 0; l < cfg.depth; ++l) {
    std::string p = block_prefix(l) + "/";
    specs.push_back({p + "ln_gain", {w}});
    if (!cfg.parallel_block) specs.push_back({p + "ln2_gain", {w}});
    specs.push_back({p + "w_qkv", {w, 3 * w}});
    specs.push_back({p + "q_gain", {h, d}});
    specs.push_back({p + "k_gain", {h, d}});
    specs.push_back({p + "w_attn_out", {w, w}});
    specs.push_back({p + "w_mlp_in", {w, m}});
    specs.push_back({p + "b_mlp_in", {m}});
    specs.push_back({p + "w_mlp_out", {m, w}});
    specs.push_back({p + "out_bias", {w}});
  }
  specs.push_back({"map/probe", {1, w}});
  specs.push_back({"map/w_qkv", {w, 3 * w}});
  specs.push_back({"map/w_out", {w, w}});
  specs.push_back({"map/ln_gain", {w}});
  specs.push_back({"map/w_mlp_in", {w, m}});
  specs.push_back({"map/b_mlp_in", {m}});
  specs.push_back({"map/w_mlp_out", {m, w}});
  specs.push_back({"map/b_mlp_out", {w}});
  specs.push_back({"map/final_gain", {w}});
  specs.push_back({"classifier/w", {w, cfg.num_classes}});
  specs.push_back({"classifier/b", {cfg.num_classes}});
  return specs;
}

Tensor& VitParams::operator[](const std::string& name) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  fail(ErrorKind::state, "unknown parameter: " + name);
}

const Tensor& VitParams::operator[](const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  fail(ErrorKind::state, "unknown parameter: " + name);
}

bool VitParams::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

int64_t VitParams::total_size() const {
  int64_t n = 0;
  for (const Tensor& t : tensors) n += t.size();
  return n;
}

bool is_head_param(const std::string& name) {
  return name.rfind("map/", 0) == 0 || name.rfind("classifier/", 0) == 0;
}

bool is_gain_param(const std::string& name) {
  return name.find("gain") != std::string::npos;
}

bool is_bias_param(const std::string& name) {
  if (name.size() >= 2 && name.compare(name.size() - 2, 2, "/b") == 0) return true;
  return name.find("b_mlp") != std::string::npos ||
         name.find("out_bias") != std::string::npos;
}

VitParams init_params(const VitConfig& cfg, const Rng& rng) {
  VitParams p;
  for (const ParamSpec& spec : param_schema(cfg)) {
    p.names.push_back(spec.name);
    if (is_gain_param(spec.name)) {
      p.tensors.push_back(Tensor::full(spec.shape, 1.0));
    } else if (is_bias_param(spec.name) || spec.name == "classifier/w") {
      p.tensors.push_back(Tensor::zeros(spec.shape));
    } else {
      // pos_embed and map/probe are not linear maps; they use the model
      // width as the effective fan-in.
      int64_t fan_in = spec.shape.size() == 2 ? spec.shape[0] : spec.shape.back();
      if (spec.name == "pos_embed" || spec.name == "map/probe") fan_in = cfg.width;
      Rng sub = rng.fork("init/" + spec.name);
      p.tensors.push_back(
          random_trunc_normal(sub, spec.shape, 1.0 / std::sqrt(static_cast<double>(fan_in))));
    }
  }
  return p;
}

VitParams zeros_like(const VitParams& p) {
  VitParams z;
  z.names = p.names;
  z.tensors.reserve(p.tensors.size());
  for (const Tensor& t : p.tensors) z.tensors.push_back(Tensor::zeros(t.shape));
  return z;
}

int64_t parameter_count(const VitConfig& cfg, CountScope scope) {
  int64_t n = 0;
  for (const ParamSpec& spec : param_schema(cfg)) {
    bool head = is_head_param(spec.name);
    if (scope == CountScope::body && head) continue;
    if (scope == CountScope::head && !head) continue;
    n += spec.size();
  }
  return n;
}

double flops_per_token(const VitConfig& cfg, FlopsMode mode) {
  double body = static_cast<double>(parameter_count(cfg, CountScope::body));
  return (mode == FlopsMode::forward ? 2.0 : 6.0) * body;
}

double attention_score_flops_per_token(const VitConfig& cfg, FlopsMode mode) {
  // Per layer, per token: QK^T and weights*V each cost 2*S*width.
  double per_layer = 4.0 * static_cast<double>(cfg.tokens()) * static_cast<double>(cfg.width);
  double fwd = static_cast<double>(cfg.depth) * per_layer;
  return (mode == FlopsMode::forward ? 1.0 : 3.0) * fwd;
}

BlockParams block_view(const VitParams& p, const VitConfig& cfg, int64_t layer) {
  std::string pre = block_prefix(layer) + "/";
  BlockParams bp{};
  bp.ln_gain = &p[pre + "ln_gain"];
  bp.ln2_gain = cfg.parallel_block ? nullptr : &p[pre + "ln2_gain"];
  bp.w_qkv = &p[pre + "w_qkv"];
  bp.q_gain = &p[pre + "q_gain"];
  bp.k_gain = &p[pre + "k_gain"];
  bp.w_attn_out = &p[pre + "w_attn_out"];
  bp.w_mlp_in = &p[pre + "w_mlp_in"];
  bp.b_mlp_in = &p[pre + "b_mlp_in"];
  bp.w_mlp_out = &p[pre + "w_mlp_out"];
  bp.out_bias = &p[pre + "out_bias"];
  return bp;
}

BlockParams block_view(VitParams& p, const VitConfig& cfg, int64_t layer) {
  return block_view(static_cast<const VitParams&>(p), cfg, layer);
}

// ---------------------------------------------------------------------------
// Attention core
// ---------------------------------------------------------------------------

double qk_logit_bound(const BlockParams& bp, const VitConfig& cfg) {
  double mq = 0.0, mk = 0.0;
  for (double v : bp.q_gain->data) mq = std::max(mq, std::fabs(v));
  for (double v : bp.k_gain->data) mk = std::max(mk, std::fabs(v));
  return std::sqrt(static_cast<double>(cfg.head_dim())) * mq * mk;
}

namespace detail {

// Shared multi-head scaled-dot-product attention. q: (Sq, W); k, v: (Skv, W).
// When qk_norm, q and k are rms-normalized per head, per token, with the
// given per-head gains before the dot product. Returns the concatenated
// head outputs (Sq, W) before the out-projection.
AttnCore attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                        int64_t heads, int64_t head_dim, bool qk_norm,
                        const Tensor* q_gain, const Tensor* k_gain) {
  const int64_t sq = q.rows(), skv = k.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
  AttnCore out;
  out.qn = q;
  out.kn = k;
  out.state.logits = Tensor::zeros({heads * sq, skv});
  out.state.weights = Tensor::zeros({heads * sq, skv});
  out.concat = Tensor::zeros({sq, heads * head_dim});
  for (int64_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * head_dim, (h + 1) * head_dim);
    Tensor kh = slice_cols(k, h * head_dim, (h + 1) * head_dim);
    if (qk_norm) {
      Tensor qg = slice_rows(*q_gain, h, h + 1);
      Tensor kg = slice_rows(*k_gain, h, h + 1);
      qg.shape = {head_dim};
      kg.shape = {head_dim};
      qh = rms_norm(qh, qg);
      kh = rms_norm(kh, kg);
      for (int64_t i = 0; i < sq; ++i)
        for (int64_t j = 0; j < head_dim; ++j)
          out.qn.at(i, h * head_dim + j) = qh.at(i, j);
      for (int64_t i = 0; i < skv; ++i)
        for (int64_t j = 0; j < head_dim; ++j)
          out.kn.at(i, h * head_dim + j) = kh.at(i, j);
    }
    Tensor logits_h = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
    Tensor weights_h = softmax(logits_h);
    Tensor vh = slice_cols(v, h * head_dim, (h + 1) * head_dim);
    Tensor oh = matmul(weights_h, vh);
    for (int64_t i = 0; i < sq; ++i) {
      for (int64_t j = 0; j < skv; ++j) {
        out.state.logits.at(h * sq + i, j) = logits_h.at(i, j);
        out.state.weights.at(h * sq + i, j) = weights_h.at(i, j);
      }
      for (int64_t j = 0; j < head_dim; ++j)
        out.concat.at(i, h * head_dim + j) = oh.at(i, j);
    }
  }
  for (double lv : out.state.logits.data)
    out.state.max_abs_logit = std::max(out.state.max_abs_logit, std::fabs(lv));
  out.state.entropy = row_entropies(out.state.weights);
  return out;
}

}  // namespace detail

std::pair<Tensor, AttentionState> qk_attention(const Tensor& x, const BlockParams& bp,
                                               const VitConfig& cfg) {
  require(x.rank() == 2 && x.cols() == cfg.width, ErrorKind::dimension,
          "qk_attention: input must be (S, width)");
  require(x.rows() >= 1, ErrorKind::dimension, "qk_attention: empty sequence");
  const int64_t w = cfg.width;
  Tensor qkv = matmul(x, *bp.w_qkv);  // no bias on the QKV projection
  Tensor q = slice_cols(qkv, 0, w);
  Tensor k = slice_cols(qkv, w, 2 * w);
  Tensor v = slice_cols(qkv, 2 * w, 3 * w);
  auto core = detail::attention_core(q, k, v, cfg.num_heads, cfg.head_dim(),
                                     cfg.qk_norm, bp.q_gain, bp.k_gain);
  return {matmul(core.concat, *bp.w_attn_out), std::move(core.state)};
}

namespace {

Tensor mlp_forward(const Tensor& x, const BlockParams& bp) {
  Tensor pre = add_bias_rows(matmul(x, *bp.w_mlp_in), *bp.b_mlp_in);
  return matmul(gelu(pre), *bp.w_mlp_out);
}

}  // namespace

Tensor parallel_block(const Tensor& x, const BlockParams& bp, const VitConfig& cfg,
                      AttentionState* attn_state) {
  if (cfg.parallel_block) {
    Tensor normed = rms_norm(x, *bp.ln_gain);  // one shared pre-norm
    auto [attn, state] = qk_attention(normed, bp, cfg);
    Tensor y = add_bias_rows(add(add(x, mlp_forward(normed, bp)), attn), *bp.out_bias);
    if (attn_state) *attn_state = std::move(state);
    return y;
  }
  // Sequential fallback: two norms, two residual adds.
  auto [attn, state] = qk_attention(rms_norm(x, *bp.ln_gain), bp, cfg);
  Tensor y1 = add(x, attn);
  Tensor y = add_bias_rows(add(y1, mlp_forward(rms_norm(y1, *bp.ln2_gain), bp)),
                           *bp.out_bias);
  if (attn_state) *attn_state = std::move(state);
  return y;
}

Tensor fused_forward(const Tensor& x, const BlockParams& bp, const VitConfig& cfg,
                     AttentionState* attn_state) {
  require(cfg.parallel_block, ErrorKind::contract,
          "fused_forward requires the parallel block form");
  const int64_t w = cfg.width, m = cfg.mlp_dim;
  Tensor normed = rms_norm(x, *bp.ln_gain);
  // First fused projection: [w_qkv | w_mlp_in], bias only on the MLP slice.
  Tensor w1 = concat_cols({*bp.w_qkv, *bp.w_mlp_in});
  Tensor bias1 = Tensor::zeros({3 * w + m});
  for (int64_t i = 0; i < m; ++i) bias1.data[3 * w + i] = bp.b_mlp_in->data[i];
  Tensor hidden = add_bias_rows(matmul(normed, w1), bias1);
  Tensor q = slice_cols(hidden, 0, w);
  Tensor k = slice_cols(hidden, w, 2 * w);
  Tensor v = slice_cols(hidden, 2 * w, 3 * w);
  Tensor mlp_pre = slice_cols(hidden, 3 * w, 3 * w + m);
  auto core = detail::attention_core(q, k, v, cfg.num_heads, cfg.head_dim(),
                                     cfg.qk_norm, bp.q_gain, bp.k_gain);
  // Second fused projection: [attn_heads | gelu(mlp)] x [w_attn_out ; w_mlp_out].
  Tensor z = concat_cols({core.concat, gelu(mlp_pre)});
  Tensor w2 = concat_rows({*bp.w_attn_out, *bp.w_mlp_out});
  Tensor y = add_bias_rows(add(x, matmul(z, w2)), *bp.out_bias);
  if (attn_state) *attn_state = std::move(core.state);
  return y;
}

// ---------------------------------------------------------------------------
// Embedding / head / loss
// ---------------------------------------------------------------------------

namespace detail {

Tensor extract_patches(const Tensor& image, const VitConfig& cfg) {
  require(image.rank() == 3 && image.shape[0] == cfg.image &&
              image.shape[1] == cfg.image && image.shape[2] == cfg.channels,
          ErrorKind::dimension, "embed: image must be (image, image, channels)");
  const int64_t g = cfg.grid(), ps = cfg.patch, c = cfg.channels, iw = cfg.image;
  Tensor patches = Tensor::zeros({g * g, cfg.patch_dim()});
  for (int64_t pr = 0; pr < g; ++pr)
    for (int64_t pc = 0; pc < g; ++pc) {
      int64_t t = pr * g + pc;
      int64_t o = 0;
      for (int64_t py = 0; py < ps; ++py)
        for (int64_t px = 0; px < ps; ++px)
          for (int64_t ch = 0; ch < c; ++ch)
            patches.at(t, o++) =
                image.data[((pr * ps + py) * iw + (pc * ps + px)) * c + ch];
    }
  return patches;
}

}  // namespace detail

Tensor embed(const Tensor& image, const VitParams& p, const VitConfig& cfg) {
  Tensor patches = detail::extract_patches(image, cfg);
  Tensor projected = add_bias_rows(matmul(patches, p["patch_embed/w"]), p["patch_embed/b"]);
  return add(projected, p["pos_embed"]);
}

Tensor interpolate_pos_embed(const Tensor& pos, int64_t new_grid) {
  require(pos.rank() == 2, ErrorKind::dimension, "pos embedding must be rank 2");
  int64_t g = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(pos.rows()))));
  require(g * g == pos.rows(), ErrorKind::dimension,
          "pos embedding rows must form a square grid");
  if (new_grid == g) return pos;  // identity, bit-exact
  require(g >= 2 && new_grid >= 2, ErrorKind::dimension,
          "grid resampling needs at least a 2x2 grid");
  const int64_t w = pos.cols();
  Tensor out = Tensor::zeros({new_grid * new_grid, w});
  const double scale = static_cast<double>(g - 1) / static_cast<double>(new_grid - 1);
  for (int64_t r = 0; r < new_grid; ++r) {
    for (int64_t c = 0; c < new_grid; ++c) {
      double yf = r * scale, xf = c * scale;
      int64_t y0 = std::min(static_cast<int64_t>(yf), g - 2);
      int64_t x0 = std::min(static_cast<int64_t>(xf), g - 2);
      double dy = yf - y0, dx = xf - x0;
      for (int64_t ch = 0; ch < w; ++ch) {
        double v00 = pos.at(y0 * g + x0, ch), v01 = pos.at(y0 * g + x0 + 1, ch);
        double v10 = pos.at((y0 + 1) * g + x0, ch), v11 = pos.at((y0 + 1) * g + x0 + 1, ch);
        out.at(r * new_grid + c, ch) = (1 - dy) * ((1 - dx) * v00 + dx * v01) +
                                       dy * ((1 - dx) * v10 + dx * v11);
      }
    }
  }
  return out;
}

namespace detail {

MapTrace map_head_trace(const Tensor& tokens, const VitParams& p, const VitConfig& cfg) {
  require(tokens.rank() == 2 && tokens.cols() == cfg.width && tokens.rows() >= 1,
          ErrorKind::dimension, "map_head: tokens must be (S, width)");
  const int64_t w = cfg.width;
  const Tensor& wqkv = p["map/w_qkv"];
  MapTrace tr;
  tr.tokens = tokens;
  const Tensor& probe = p["map/probe"];
  tr.q = matmul(probe, slice_cols(wqkv, 0, w));
  tr.k = matmul(tokens, slice_cols(wqkv, w, 2 * w));
  tr.v = matmul(tokens, slice_cols(wqkv, 2 * w, 3 * w));
  auto core = attention_core(tr.q, tr.k, tr.v, cfg.num_heads, cfg.head_dim(),
                             /*qk_norm=*/false, nullptr, nullptr);
  tr.attn = std::move(core.state);
  tr.attn_concat = std::move(core.concat);
  tr.h1 = add(probe, matmul(tr.attn_concat, p["map/w_out"]));
  tr.h1n = rms_norm(tr.h1, p["map/ln_gain"]);
  tr.mlp_pre = add_bias_rows(matmul(tr.h1n, p["map/w_mlp_in"]), p["map/b_mlp_in"]);
  tr.mlp_act = gelu(tr.mlp_pre);
  tr.h2 = add(tr.h1, add_bias_rows(matmul(tr.mlp_act, p["map/w_mlp_out"]),
                                   p["map/b_mlp_out"]));
  tr.pooled = rms_norm(tr.h2, p["map/final_gain"]);
  return tr;
}

}  // namespace detail

Tensor map_head(const Tensor& tokens, const VitParams& p, const VitConfig& cfg,
                AttentionState* attn_state) {
  MapTrace tr = detail::map_head_trace(tokens, p, cfg);
  if (attn_state) *attn_state = std::move(tr.attn);
  Tensor pooled = std::move(tr.pooled);
  pooled.shape = {cfg.width};
  return pooled;
}

double sigmoid_xent(const Tensor& logits, const Tensor& labels) {
  require(logits.same_shape(labels) && logits.rank() == 2, ErrorKind::dimension,
          "sigmoid_xent shape mismatch");
  double total = 0.0;
  for (int64_t i = 0; i < logits.size(); ++i) {
    double y = labels.data[i];
    require(y == 0.0 || y == 1.0, ErrorKind::domain,
            "sigmoid_xent labels must be 0 or 1");
    double l = logits.data[i];
    double softplus = std::max(l, 0.0) + std::log1p(std::exp(-std::fabs(l)));
    total += softplus - y * l;
  }
  return total / static_cast<double>(logits.rows());
}

Tensor sigmoid_xent_backward(const Tensor& logits, const Tensor& labels) {
  require(logits.same_shape(labels) && logits.rank() == 2, ErrorKind::state,
          "sigmoid_xent_backward shape mismatch");
  Tensor g = Tensor::zeros(logits.shape);
  double inv_b = 1.0 / static_cast<double>(logits.rows());
  for (int64_t i = 0; i < logits.size(); ++i) {
    double l = logits.data[i];
    double sig = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l))
                          : std::exp(l) / (1.0 + std::exp(l));
    g.data[i] = (sig - labels.data[i]) * inv_b;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Whole-model forward
// ---------------------------------------------------------------------------

namespace detail {

BlockTrace block_forward_trace(const Tensor& x, const BlockParams& bp,
                               const VitConfig& cfg) {
  const int64_t w = cfg.width;
  BlockTrace tr;
  tr.x_in = x;
  tr.normed = rms_norm(x, *bp.ln_gain);
  Tensor qkv = matmul(tr.normed, *bp.w_qkv);
  tr.q = slice_cols(qkv, 0, w);
  tr.k = slice_cols(qkv, w, 2 * w);
  tr.v = slice_cols(qkv, 2 * w, 3 * w);
  auto core = attention_core(tr.q, tr.k, tr.v, cfg.num_heads, cfg.head_dim(),
                             cfg.qk_norm, bp.q_gain, bp.k_gain);
  tr.qn = std::move(core.qn);
  tr.kn = std::move(core.kn);
  tr.attn = std::move(core.state);
  tr.attn_concat = std::move(core.concat);
  tr.mlp_pre = add_bias_rows(matmul(tr.normed, *bp.w_mlp_in), *bp.b_mlp_in);
  tr.mlp_act = gelu(tr.mlp_pre);
  return tr;
}

Tensor block_trace_output(const BlockTrace& tr, const BlockParams& bp) {
  Tensor attn = matmul(tr.attn_concat, *bp.w_attn_out);
  Tensor mlp = matmul(tr.mlp_act, *bp.w_mlp_out);
  return add_bias_rows(add(add(tr.x_in, mlp), attn), *bp.out_bias);
}

}  // namespace detail

ForwardTrace model_forward(const Tensor& images, const VitParams& p, const VitConfig& cfg) {
  cfg.validate();
  require(cfg.parallel_block, ErrorKind::contract,
          "model_forward uses the parallel block form");
  require(images.rank() == 2 &&
              images.cols() == cfg.image * cfg.image * cfg.channels,
          ErrorKind::dimension, "images must be (B, image*image*channels)");
  const int64_t batch = images.rows();
  ForwardTrace trace;
  trace.logits = Tensor::zeros({batch, cfg.num_classes});
  trace.max_abs_logit = 0.0;
  trace.min_entropy = std::numeric_limits<double>::infinity();
  for (int64_t b = 0; b < batch; ++b) {
    Tensor img = slice_rows(images, b, b + 1);
    img.shape = {cfg.image, cfg.image, cfg.channels};
    Tensor patches = detail::extract_patches(img, cfg);
    Tensor x = add(add_bias_rows(matmul(patches, p["patch_embed/w"]), p["patch_embed/b"]),
                   p["pos_embed"]);
    trace.patch_rows.push_back(patches);
    trace.embedded.push_back(x);
    std::vector<BlockTrace> blocks;
    for (int64_t l = 0; l < cfg.depth; ++l) {
      BlockParams bp = block_view(p, cfg, l);
      BlockTrace tr = detail::block_forward_trace(x, bp, cfg);
      x = detail::block_trace_output(tr, bp);
      trace.max_abs_logit = std::max(trace.max_abs_logit, tr.attn.max_abs_logit);
      for (double h : tr.attn.entropy) trace.min_entropy = std::min(trace.min_entropy, h);
      blocks.push_back(std::move(tr));
    }
    trace.blocks.push_back(std::move(blocks));
    MapTrace head = detail::map_head_trace(x, p, cfg);
    Tensor logits_row = add_bias_rows(matmul(head.pooled, p["classifier/w"]),
                                      p["classifier/b"]);
    for (int64_t c = 0; c < cfg.num_classes; ++c) trace.logits.at(b, c) = logits_row.at(0, c);
    trace.heads.push_back(std::move(head));
  }
  return trace;
}

double model_loss(const ForwardTrace& trace, const Tensor& labels) {
  return sigmoid_xent(trace.logits, labels);
}

}  // namespace meshvit::model
