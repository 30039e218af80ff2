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

using namespace meshvit;

TEST_CASE("rng streams are pure functions of (seed, counter)") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42, 50);
  Rng d(42);
  for (int i = 0; i < 50; ++i) d.next_u64();
  for (int i = 0; i < 10; ++i) CHECK(c.next_u64() == d.next_u64());
}

TEST_CASE("rng golden vectors pin the algorithm across platforms") {
  // Frozen from the documented splitmix64 counter scheme; any change to the
  // mixing constants or counter handling must fail here.
  Rng r(42);
  const uint64_t expected[4] = {
      13679457532755275413ull,
      2949826092126892291ull,
      5139283748462763858ull,
      6349198060258255764ull,
  };
  for (uint64_t e : expected) CHECK(r.next_u64() == e);
}

TEST_CASE("uniform values live in [0,1) and normals have sane moments") {
  Rng r(7);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = r.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean - 0.5) < 5e-3);
  CHECK(std::fabs(var - 1.0 / 12.0) < 5e-3);

  double nsum = 0.0, nsum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = r.next_normal();
    nsum += z;
    nsum2 += z * z;
  }
  CHECK(std::fabs(nsum / n) < 1e-2);
  CHECK(std::fabs(nsum2 / n - 1.0) < 2e-2);
}

TEST_CASE("truncated normal keeps the requested stddev and the cut") {
  Rng r(11);
  const int n = 400000;
  double sum2 = 0.0;
  const double stddev = 0.125;
  for (int i = 0; i < n; ++i) {
    double z = r.next_trunc_normal(stddev);
    CHECK(std::fabs(z) <= 2.0 / 0.87962566103423978 * stddev * 1.0000001);
    sum2 += z * z;
  }
  double sd = std::sqrt(sum2 / n);
  CHECK(sd == doctest::Approx(stddev).epsilon(0.01));
}

TEST_CASE("forked substreams are independent of the parent counter") {
  Rng a(3);
  a.next_u64();
  a.next_u64();
  Rng b(3);
  Rng fa = a.fork("weights", 4);
  Rng fb = b.fork("weights", 4);
  for (int i = 0; i < 8; ++i) CHECK(fa.next_u64() == fb.next_u64());
  Rng other = b.fork("weights", 5);
  CHECK(other.next_u64() != fb.next_u64());
}
