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
#include "tensor.hpp"

#include <cmath>

#include "rng.hpp"

namespace meshvit {

int64_t Tensor::count(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t e : s) {
    require(e >= 0, ErrorKind::dimension, "negative extent");
    n *= e;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int64_t> s) {
  int64_t n = count(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int64_t> s, double v) {
  int64_t n = count(s);
  return Tensor(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::identity(int64_t n) {
  Tensor t = zeros({n, n});
  for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  int64_t r = static_cast<int64_t>(rows.size());
  int64_t c = r > 0 ? static_cast<int64_t>(rows.begin()->size()) : 0;
  std::vector<double> d;
  d.reserve(r * c);
  for (const auto& row : rows) {
    require(static_cast<int64_t>(row.size()) == c, ErrorKind::dimension,
            "ragged row literal");
    d.insert(d.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(d));
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

// Rows = all leading dims collapsed, row length = trailing dim.
std::pair<int64_t, int64_t> as_rows(const Tensor& x) {
  require(x.rank() >= 1, ErrorKind::dimension, "rank-0 tensor");
  int64_t d = x.shape.back();
  int64_t rows = d == 0 ? 0 : x.size() / d;
  return {rows, d};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::dimension,
          "matmul expects rank-2 operands");
  require(a.cols() == b.rows(), ErrorKind::dimension,
          "matmul inner extents differ");
  int64_t m = a.rows(), p = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a.data.data() + i * p;
    double* crow = c.data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t l = 0; l < p; ++l) acc += arow[l] * b.data[l * n + j];
      crow[j] = acc;
    }
  }
  return c;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain) {
  auto [rows, d] = as_rows(x);
  require(gain.rank() == 1 && gain.shape[0] == d, ErrorKind::dimension,
          "rms_norm gain extent mismatch");
  require(d >= 1, ErrorKind::dimension, "rms_norm on empty rows");
  Tensor out = Tensor::zeros(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data.data() + r * d;
    double ss = 0.0;
    for (int64_t i = 0; i < d; ++i) ss += row[i] * row[i];
    double rms = std::sqrt(ss / static_cast<double>(d));
    require(rms != 0.0, ErrorKind::domain, "rms_norm: all-zero row");
    double* orow = out.data.data() + r * d;
    for (int64_t i = 0; i < d; ++i) orow[i] = gain.data[i] * (row[i] / rms);
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  require(x.all_finite(), ErrorKind::domain, "softmax on non-finite input");
  auto [rows, d] = as_rows(x);
  require(d >= 1, ErrorKind::dimension, "softmax on empty rows");
  Tensor out = Tensor::zeros(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data.data() + r * d;
    double* orow = out.data.data() + r * d;
    double mx = row[0];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      orow[i] = std::exp(row[i] - mx);
      z += orow[i];
    }
    for (int64_t i = 0; i < d; ++i) orow[i] /= z;
  }
  return out;
}

namespace {
inline double phi_cdf(double v) { return 0.5 * std::erfc(-v * M_SQRT1_2); }
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data) v = v * phi_cdf(v);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), ErrorKind::dimension, "add shape mismatch");
  Tensor out = a;
  for (int64_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data) v *= c;
  return out;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, ErrorKind::dimension, "transpose expects rank 2");
  Tensor out = Tensor::zeros({a.cols(), a.rows()});
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx) {
  require(a.rank() == 2, ErrorKind::dimension, "gather_rows expects rank 2");
  Tensor out = Tensor::zeros({static_cast<int64_t>(idx.size()), a.cols()});
  for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i) {
    require(idx[i] >= 0 && idx[i] < a.rows(), ErrorKind::domain,
            "gather_rows index out of range");
    for (int64_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(idx[i], j);
  }
  return out;
}

std::vector<double> row_entropies(const Tensor& probs) {
  auto [rows, d] = as_rows(probs);
  std::vector<double> h(rows, 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      double p = probs.data[r * d + i];
      if (p > 0.0) acc -= p * std::log(p);
    }
    h[r] = acc;
  }
  return h;
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
  require(a.rank() == 2 && c0 >= 0 && c0 <= c1 && c1 <= a.cols(),
          ErrorKind::dimension, "slice_cols out of range");
  Tensor out = Tensor::zeros({a.rows(), c1 - c0});
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t j = c0; j < c1; ++j) out.at(i, j - c0) = a.at(i, j);
  return out;
}

Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1) {
  require(a.rank() == 2 && r0 >= 0 && r0 <= r1 && r1 <= a.rows(),
          ErrorKind::dimension, "slice_rows out of range");
  Tensor out = Tensor::zeros({r1 - r0, a.cols()});
  for (int64_t i = r0; i < r1; ++i)
    for (int64_t j = 0; j < a.cols(); ++j) out.at(i - r0, j) = a.at(i, j);
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::dimension, "concat_cols of nothing");
  int64_t rows = parts[0].rows(), cols = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.rows() == rows, ErrorKind::dimension,
            "concat_cols row mismatch");
    cols += p.cols();
  }
  Tensor out = Tensor::zeros({rows, cols});
  int64_t off = 0;
  for (const Tensor& p : parts) {
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::dimension, "concat_rows of nothing");
  int64_t cols = parts[0].cols(), rows = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.cols() == cols, ErrorKind::dimension,
            "concat_rows column mismatch");
    rows += p.rows();
  }
  Tensor out = Tensor::zeros({rows, cols});
  int64_t off = 0;
  for (const Tensor& p : parts) {
    for (int64_t i = 0; i < p.rows(); ++i)
      for (int64_t j = 0; j < cols; ++j) out.at(off + i, j) = p.at(i, j);
    off += p.rows();
  }
  return out;
}

void accumulate_cols(Tensor& dst, const Tensor& src, int64_t c0) {
  require(dst.rank() == 2 && src.rank() == 2 && dst.rows() == src.rows() &&
              c0 + src.cols() <= dst.cols(),
          ErrorKind::dimension, "accumulate_cols out of range");
  for (int64_t i = 0; i < src.rows(); ++i)
    for (int64_t j = 0; j < src.cols(); ++j) dst.at(i, c0 + j) += src.at(i, j);
}

Tensor add_bias_rows(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 2 && bias.rank() == 1 && bias.shape[0] == x.cols(),
          ErrorKind::dimension, "add_bias_rows extent mismatch");
  Tensor out = x;
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j) out.at(i, j) += bias.data[j];
  return out;
}

Tensor col_sum(const Tensor& x) {
  require(x.rank() == 2, ErrorKind::dimension, "col_sum expects rank 2");
  Tensor out = Tensor::zeros({x.cols()});
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j) out.data[j] += x.at(i, j);
  return out;
}

Tensor random_uniform(Rng& rng, std::vector<int64_t> s, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.data) v = lo + (hi - lo) * rng.next_uniform();
  return t;
}

Tensor random_normal(Rng& rng, std::vector<int64_t> s, double stddev) {
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.data) v = stddev * rng.next_normal();
  return t;
}

Tensor random_trunc_normal(Rng& rng, std::vector<int64_t> s, double stddev) {
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.data) v = rng.next_trunc_normal(stddev);
  return t;
}

// --------------------------- backward passes -------------------------------

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& up) {
  require(up.rank() == 2 && up.rows() == a.rows() && up.cols() == b.cols(),
          ErrorKind::state, "matmul_backward: upstream does not match retained operands");
  return {matmul(up, transpose(b)), matmul(transpose(a), up)};
}

RmsNormGrads rms_norm_backward(const Tensor& x, const Tensor& gain, const Tensor& up) {
  require(x.same_shape(up), ErrorKind::state,
          "rms_norm_backward: upstream does not match retained input");
  auto [rows, d] = as_rows(x);
  require(gain.rank() == 1 && gain.shape[0] == d, ErrorKind::state,
          "rms_norm_backward: gain mismatch");
  Tensor dx = Tensor::zeros(x.shape);
  Tensor dgain = Tensor::zeros(gain.shape);
  double nd = static_cast<double>(d);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data.data() + r * d;
    const double* ur = up.data.data() + r * d;
    double ss = 0.0;
    for (int64_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
    double rms = std::sqrt(ss / nd);
    require(rms != 0.0, ErrorKind::domain, "rms_norm_backward: all-zero row");
    // y_i = g_i x_i / rms;  dx_j = u_j g_j / rms - x_j * sum_i(u_i g_i x_i) / (n rms^3)
    double dot = 0.0;
    for (int64_t i = 0; i < d; ++i) dot += ur[i] * gain.data[i] * xr[i];
    double r3 = rms * rms * rms;
    double* dxr = dx.data.data() + r * d;
    for (int64_t i = 0; i < d; ++i) {
      dxr[i] = ur[i] * gain.data[i] / rms - xr[i] * dot / (nd * r3);
      dgain.data[i] += ur[i] * xr[i] / rms;
    }
  }
  return {std::move(dx), std::move(dgain)};
}

Tensor softmax_backward(const Tensor& probs, const Tensor& up) {
  require(probs.same_shape(up), ErrorKind::state,
          "softmax_backward: upstream does not match retained output");
  auto [rows, d] = as_rows(probs);
  Tensor dx = Tensor::zeros(probs.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* pr = probs.data.data() + r * d;
    const double* ur = up.data.data() + r * d;
    double dot = 0.0;
    for (int64_t i = 0; i < d; ++i) dot += ur[i] * pr[i];
    double* dr = dx.data.data() + r * d;
    for (int64_t i = 0; i < d; ++i) dr[i] = pr[i] * (ur[i] - dot);
  }
  return dx;
}

Tensor gelu_backward(const Tensor& x, const Tensor& up) {
  require(x.same_shape(up), ErrorKind::state,
          "gelu_backward: upstream does not match retained input");
  Tensor dx = Tensor::zeros(x.shape);
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  for (int64_t i = 0; i < x.size(); ++i) {
    double v = x.data[i];
    double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    dx.data[i] = up.data[i] * (phi_cdf(v) + v * pdf);
  }
  return dx;
}

Tensor add_backward(const Tensor& up) { return up; }

Tensor scale_backward(double c, const Tensor& up) { return scale(up, c); }

Tensor transpose_backward(const Tensor& up) { return transpose(up); }

Tensor gather_rows_backward(const Tensor& a, const std::vector<int64_t>& idx,
                            const Tensor& up) {
  require(up.rank() == 2 && up.rows() == static_cast<int64_t>(idx.size()) &&
              up.cols() == a.cols(),
          ErrorKind::state, "gather_rows_backward: upstream mismatch");
  Tensor da = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < up.rows(); ++i)
    for (int64_t j = 0; j < up.cols(); ++j) da.at(idx[i], j) += up.at(i, j);
  return da;
}

void axpy(Tensor& y, double alpha, const Tensor& x) {
  require(y.same_shape(x), ErrorKind::dimension, "axpy shape mismatch");
  for (int64_t i = 0; i < y.size(); ++i) y.data[i] += alpha * x.data[i];
}

}  // namespace meshvit
