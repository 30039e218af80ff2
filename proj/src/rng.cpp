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
#include "rng.hpp"

#include <cmath>

namespace meshvit {

namespace {
constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// Std of a standard normal truncated to [-2, 2]; samples are divided by this
// so the initializer keeps the requested variance.
constexpr double kTruncNormStd = 0.87962566103423978;
}  // namespace

namespace rng_detail {

uint64_t mix(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace rng_detail

uint64_t Rng::next_u64() {
  uint64_t v = rng_detail::mix(seed_ + (++counter_) * kGolden);
  return v;
}

double Rng::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_normal() {
  // u1 in (0, 1] so log(u1) is finite.
  double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double u2 = next_uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * M_PI * u2);
}

double Rng::next_trunc_normal(double stddev) {
  double z = next_normal();
  while (std::fabs(z) > 2.0) z = next_normal();
  return z / kTruncNormStd * stddev;
}

Rng Rng::fork(std::string_view label) const {
  return Rng(rng_detail::mix(seed_ ^ rng_detail::fnv1a(label)));
}

Rng Rng::fork(std::string_view label, uint64_t index) const {
  return Rng(rng_detail::mix(
      rng_detail::mix(seed_ ^ rng_detail::fnv1a(label)) + index * kGolden));
}

}  // namespace meshvit
