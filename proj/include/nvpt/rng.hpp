/*
 * Copyright 2026 The nvpt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <random>

namespace nvpt {

/// splitmix64 finalizer; used to derive independent seed streams.
std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic random source: mt19937_64 engine plus a Box-Muller Gaussian.
///
/// std::normal_distribution is not portable across standard libraries, so the
/// Gaussian here is computed explicitly: z = sqrt(-2 ln u1) * cos(2 pi u2)
/// with u1 in (0,1], u2 in [0,1). Every gaussian() call consumes exactly two
/// engine draws; there is no cached spare, which keeps draw accounting
/// reproducible regardless of call interleaving.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double gaussian();
  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  std::uint64_t seed() const { return seed_; }

  /// Independent substream; safe for per-worker or per-item parallel use.
  Rng derive(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x9e3779b97f4a7c15ull)));
  }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

} // namespace nvpt
