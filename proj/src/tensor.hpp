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
#include <initializer_list>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace meshvit {

// Dense row-major f64 array. Values are immutable by convention once an op
// returns them; ops are pure functions so results can be shared across
// threads freely.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    require(count(shape) == static_cast<int64_t>(data.size()),
            ErrorKind::dimension, "tensor data does not match shape");
  }

  static Tensor zeros(std::vector<int64_t> s);
  static Tensor full(std::vector<int64_t> s, double v);
  static Tensor identity(int64_t n);
  // 2D helper for literals in tests and small setups.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  static int64_t count(const std::vector<int64_t>& s);
  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return shape.at(1); }

  double& at(int64_t r, int64_t c) { return data[r * cols() + c]; }
  double at(int64_t r, int64_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

class Rng;

// ---------------------------------------------------------------------------
// Forward primitives. Reductions accumulate in ascending index order; sharded
// equivalence relies on reassociation tolerance, not on matching this order.
// ---------------------------------------------------------------------------

// c[i,j] = sum_l a[i,l] * b[l,j], l ascending.
Tensor matmul(const Tensor& a, const Tensor& b);

// Per-row gain-only normalization: out = gain (*) row / rms(row),
// rms(v) = sqrt(mean(v^2)). No epsilon: an all-zero row is a domain error so
// the scale-invariance property stays exact. Rows are the trailing dimension.
Tensor rms_norm(const Tensor& x, const Tensor& gain);

// Row-wise stable softmax over the trailing dimension.
Tensor softmax(const Tensor& x);

// Exact Gaussian-CDF form: gelu(x) = x * Phi(x).
Tensor gelu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor transpose(const Tensor& a);
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx);

// Row entropies of a stochastic matrix, in nats (0 * log 0 := 0).
std::vector<double> row_entropies(const Tensor& probs);

// Layout utilities (pure copies, no arithmetic).
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);
Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
void accumulate_cols(Tensor& dst, const Tensor& src, int64_t c0);  // dst[:, c0..] += src

// out[i,j] = x[i,j] + bias[j]
Tensor add_bias_rows(const Tensor& x, const Tensor& bias);
Tensor col_sum(const Tensor& x);  // (cols) vector of column sums

Tensor random_uniform(Rng& rng, std::vector<int64_t> s, double lo, double hi);
Tensor random_normal(Rng& rng, std::vector<int64_t> s, double stddev);
Tensor random_trunc_normal(Rng& rng, std::vector<int64_t> s, double stddev);

// ---------------------------------------------------------------------------
// Hand-written backward passes. Each takes the retained forward values it
// needs plus the upstream gradient and returns input/parameter gradients.
// Shape mismatches against the retained values raise a state error.
// ---------------------------------------------------------------------------

struct MatmulGrads {
  Tensor da;
  Tensor db;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& up);

struct RmsNormGrads {
  Tensor dx;
  Tensor dgain;
};
RmsNormGrads rms_norm_backward(const Tensor& x, const Tensor& gain, const Tensor& up);

// Takes the forward *output* (the probabilities), not the logits.
Tensor softmax_backward(const Tensor& probs, const Tensor& up);

Tensor gelu_backward(const Tensor& x, const Tensor& up);
Tensor add_backward(const Tensor& up);            // same gradient for both inputs
Tensor scale_backward(double c, const Tensor& up);
Tensor transpose_backward(const Tensor& up);
Tensor gather_rows_backward(const Tensor& a, const std::vector<int64_t>& idx,
                            const Tensor& up);

// In-place helpers used by optimizers and gradient accumulation.
void axpy(Tensor& y, double alpha, const Tensor& x);  // y += alpha * x

}  // namespace meshvit
