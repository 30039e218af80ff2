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
#include <string_view>

namespace meshvit {

// Counter-based generator. The value stream is a pure function of
// (seed, counter): output(i) = splitmix64_mix(seed + (counter + i) * GOLDEN).
// All arithmetic is uint64 with wraparound, so streams are identical on every
// platform. Copying an Rng forks the stream at the current counter.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double next_uniform();

  // Standard normal via Box-Muller (consumes two counter steps).
  double next_normal();

  // Standard normal conditioned on |z| <= 2, rescaled so the resulting
  // distribution has unit variance, then multiplied by stddev. Matches the
  // usual variance-preserving truncated-normal initializer.
  double next_trunc_normal(double stddev);

  // Deterministic substream derived from a label: same (seed, label) always
  // yields the same stream, independent of this generator's counter.
  Rng fork(std::string_view label) const;
  Rng fork(std::string_view label, uint64_t index) const;

 private:
  uint64_t seed_;
  uint64_t counter_;
};

namespace rng_detail {
uint64_t mix(uint64_t z);
uint64_t fnv1a(std::string_view s);
}  // namespace rng_detail

}  // namespace meshvit
