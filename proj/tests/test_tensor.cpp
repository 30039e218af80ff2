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

#include "fd_check.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace meshvit;

namespace {

// Independent triple-loop oracle, same ascending accumulation order.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c = Tensor::zeros({a.rows(), b.cols()});
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (int64_t l = 0; l < a.cols(); ++l) s += a.at(i, l) * b.at(l, j);
      c.at(i, j) = s;
    }
  return c;
}

// Maclaurin series for erf, good to ~1e-16 for |x| <= 2. Used as an oracle
// for the exact-CDF gelu, independent of std::erf.
double erf_series(double x) {
  double term = x, sum = x;
  for (int n = 1; n < 60; ++n) {
    term *= -x * x / n;
    sum += term / (2 * n + 1);
  }
  return sum * 2.0 / std::sqrt(M_PI);
}

}  // namespace

TEST_CASE("matmul: identity, hand case, triple-loop oracle") {
  Rng rng(1);
  Tensor x = random_normal(rng, {3, 3}, 1.0);
  Tensor ix = matmul(Tensor::identity(3), x);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(ix.data[i] == x.data[i]);

  Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor b = Tensor::from_rows({{5}, {6}});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == 17.0);
  CHECK(c.at(1, 0) == 39.0);

  Tensor p = random_normal(rng, {8, 8}, 1.0);
  Tensor q = random_normal(rng, {8, 8}, 1.0);
  Tensor got = matmul(p, q);
  Tensor want = naive_matmul(p, q);
  for (int64_t i = 0; i < got.size(); ++i) CHECK(got.data[i] == want.data[i]);

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), Error);
}

TEST_CASE("rms_norm: hand values, scale invariance, gain scaling, zero row") {
  Tensor x({2}, {3.0, 4.0});
  Tensor ones = Tensor::full({2}, 1.0);
  Tensor out = rms_norm(x, ones);
  double rms = std::sqrt(12.5);
  CHECK(out.data[0] == doctest::Approx(3.0 / rms).epsilon(1e-15));
  CHECK(out.data[1] == doctest::Approx(4.0 / rms).epsilon(1e-15));
  CHECK(out.data[0] == doctest::Approx(0.848528137423857).epsilon(1e-14));
  CHECK(out.data[1] == doctest::Approx(1.131370849898476).epsilon(1e-14));

  Rng rng(2);
  Tensor row = random_normal(rng, {1, 16}, 1.0);
  Tensor g16 = Tensor::full({16}, 1.0);
  Tensor base = rms_norm(row, g16);
  for (double c : {2.0, 0.5, 1024.0}) {  // power-of-two scaling is bit-exact
    Tensor scaled = rms_norm(scale(row, c), g16);
    for (int64_t i = 0; i < base.size(); ++i) CHECK(scaled.data[i] == base.data[i]);
  }
  for (double c : {3.7, 0.001, 993.25}) {
    Tensor scaled = rms_norm(scale(row, c), g16);
    for (int64_t i = 0; i < base.size(); ++i)
      CHECK(scaled.data[i] == doctest::Approx(base.data[i]).epsilon(1e-12));
  }

  // Uniform gain 2 makes every row L2 norm equal 2*sqrt(d).
  Tensor wide = random_normal(rng, {4, 64}, 1.0);
  Tensor g = Tensor::full({64}, 2.0);
  Tensor n = rms_norm(wide, g);
  for (int64_t r = 0; r < 4; ++r) {
    double ss = 0.0;
    for (int64_t i = 0; i < 64; ++i) ss += n.at(r, i) * n.at(r, i);
    CHECK(std::sqrt(ss) == doctest::Approx(2.0 * 8.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(rms_norm(Tensor::zeros({1, 4}), Tensor::full({4}, 1.0)), Error);
}

TEST_CASE("softmax: uniform, ratios, row sums, shift invariance, entropy floor") {
  Tensor z = softmax(Tensor::zeros({1, 4}));
  for (double v : z.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Tensor l({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  Tensor s = softmax(l);
  CHECK(s.data[0] == doctest::Approx(1.0 / 6).epsilon(1e-14));
  CHECK(s.data[1] == doctest::Approx(2.0 / 6).epsilon(1e-14));
  CHECK(s.data[2] == doctest::Approx(3.0 / 6).epsilon(1e-14));

  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = random_uniform(rng, {1, 9}, -6.0, 6.0);
    Tensor p = softmax(x);
    double sum = 0.0;
    for (double v : p.data) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-12);

    Tensor shifted = softmax(add(x, Tensor::full({1, 9}, 17.5)));
    for (int64_t i = 0; i < 9; ++i)
      CHECK(shifted.data[i] == doctest::Approx(p.data[i]).epsilon(1e-12));

    // H >= ln S - (max - min): brute-force check of the spread bound.
    double mx = x.data[0], mn = x.data[0];
    for (double v : x.data) {
      mx = std::max(mx, v);
      mn = std::min(mn, v);
    }
    CHECK(row_entropies(p)[0] >= std::log(9.0) - (mx - mn) - 1e-12);
  }

  Tensor bad = Tensor::zeros({1, 2});
  bad.data[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(softmax(bad), Error);
}

TEST_CASE("gelu: zero, erf-series oracle, monotone tails") {
  CHECK(gelu(Tensor({1}, {0.0})).data[0] == 0.0);
  for (double x : {1.0, -0.5, 0.3, 2.0}) {
    double want = x * 0.5 * (1.0 + erf_series(x / std::sqrt(2.0)));
    CHECK(gelu(Tensor({1}, {x})).data[0] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("transpose is an involution; gather_rows picks rows") {
  Rng rng(4);
  Tensor a = random_normal(rng, {5, 7}, 1.0);
  Tensor tt = transpose(transpose(a));
  for (int64_t i = 0; i < a.size(); ++i) CHECK(tt.data[i] == a.data[i]);

  Tensor g = gather_rows(a, {4, 0, 0});
  for (int64_t j = 0; j < 7; ++j) {
    CHECK(g.at(0, j) == a.at(4, j));
    CHECK(g.at(1, j) == a.at(0, j));
    CHECK(g.at(2, j) == a.at(0, j));
  }
  CHECK_THROWS_AS(gather_rows(a, {5}), Error);
}

TEST_CASE("layout helpers: slices, concat, bias, col_sum") {
  Tensor a = Tensor::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}});
  Tensor left = slice_cols(a, 0, 2), right = slice_cols(a, 2, 4);
  Tensor back = concat_cols({left, right});
  for (int64_t i = 0; i < a.size(); ++i) CHECK(back.data[i] == a.data[i]);

  Tensor top = slice_rows(a, 0, 1), bottom = slice_rows(a, 1, 2);
  Tensor stacked = concat_rows({top, bottom});
  for (int64_t i = 0; i < a.size(); ++i) CHECK(stacked.data[i] == a.data[i]);

  Tensor biased = add_bias_rows(a, Tensor({4}, {10, 20, 30, 40}));
  CHECK(biased.at(0, 0) == 11.0);
  CHECK(biased.at(1, 3) == 48.0);

  Tensor cs = col_sum(a);
  CHECK(cs.data[0] == 6.0);
  CHECK(cs.data[3] == 12.0);
}

// ---------------------------------------------------------------------------
// Backward passes against central finite differences (rel err <= 1e-5).
// ---------------------------------------------------------------------------

TEST_CASE("matmul backward matches finite differences") {
  Rng rng(10);
  Tensor a = random_normal(rng, {4, 4}, 1.0);
  Tensor b = random_normal(rng, {4, 4}, 1.0);
  Tensor up = random_normal(rng, {4, 4}, 1.0);

  auto loss_a = [&](const Tensor& aa) {
    Tensor c = matmul(aa, b);
    double s = 0.0;
    for (int64_t i = 0; i < c.size(); ++i) s += c.data[i] * up.data[i];
    return s;
  };
  auto loss_b = [&](const Tensor& bb) {
    Tensor c = matmul(a, bb);
    double s = 0.0;
    for (int64_t i = 0; i < c.size(); ++i) s += c.data[i] * up.data[i];
    return s;
  };
  MatmulGrads g = matmul_backward(a, b, up);
  CHECK(fdcheck::rel_error(g.da, fdcheck::finite_diff(loss_a, a)) <= 1e-5);
  CHECK(fdcheck::rel_error(g.db, fdcheck::finite_diff(loss_b, b)) <= 1e-5);

  CHECK_THROWS_AS(matmul_backward(a, b, Tensor::zeros({3, 3})), Error);
}

TEST_CASE("rms_norm backward matches finite differences") {
  Rng rng(11);
  Tensor x = random_normal(rng, {3, 8}, 1.0);
  Tensor gain = random_uniform(rng, {8}, 0.5, 2.0);
  Tensor up = random_normal(rng, {3, 8}, 1.0);

  auto project = [&](const Tensor& out) {
    double s = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) s += out.data[i] * up.data[i];
    return s;
  };
  RmsNormGrads g = rms_norm_backward(x, gain, up);
  CHECK(fdcheck::rel_error(
            g.dx, fdcheck::finite_diff(
                      [&](const Tensor& xx) { return project(rms_norm(xx, gain)); }, x)) <= 1e-5);
  CHECK(fdcheck::rel_error(
            g.dgain, fdcheck::finite_diff(
                         [&](const Tensor& gg) { return project(rms_norm(x, gg)); }, gain)) <= 1e-5);
}

TEST_CASE("softmax/gelu/add/scale/gather backward match finite differences") {
  Rng rng(12);
  Tensor x = random_normal(rng, {2, 6}, 1.0);
  Tensor up = random_normal(rng, {2, 6}, 1.0);
  auto project = [&](const Tensor& out) {
    double s = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) s += out.data[i] * up.data[i];
    return s;
  };

  Tensor ds = softmax_backward(softmax(x), up);
  CHECK(fdcheck::rel_error(
            ds, fdcheck::finite_diff([&](const Tensor& xx) { return project(softmax(xx)); }, x)) <= 1e-5);

  Tensor dg = gelu_backward(x, up);
  CHECK(fdcheck::rel_error(
            dg, fdcheck::finite_diff([&](const Tensor& xx) { return project(gelu(xx)); }, x)) <= 1e-5);

  // add: gradient is upstream unchanged at any point
  Tensor da = add_backward(up);
  for (int64_t i = 0; i < up.size(); ++i) CHECK(da.data[i] == up.data[i]);

  Tensor dsc = scale_backward(2.5, up);
  CHECK(fdcheck::rel_error(
            dsc, fdcheck::finite_diff([&](const Tensor& xx) { return project(scale(xx, 2.5)); }, x)) <= 1e-5);

  std::vector<int64_t> idx = {1, 1, 0};
  Tensor gup = random_normal(rng, {3, 6}, 1.0);
  auto gproject = [&](const Tensor& out) {
    double s = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) s += out.data[i] * gup.data[i];
    return s;
  };
  Tensor dgr = gather_rows_backward(x, idx, gup);
  CHECK(fdcheck::rel_error(
            dgr, fdcheck::finite_diff(
                     [&](const Tensor& xx) { return gproject(gather_rows(xx, idx)); }, x)) <= 1e-5);
}
