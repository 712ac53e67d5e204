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

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "nvpt/codec.hpp"
#include "nvpt/device_models.hpp"
#include "nvpt/rng.hpp"
#include "nvpt/selection.hpp"
#include "nvpt/types.hpp"

namespace nvpt {

/// Magnitude-dependent Gaussian noise injected into prompt tokens during
/// tuning. Entries are bucketed by |S_ij| / max|S| into four intervals
/// (>0.75, [0.5,0.75], [0.25,0.5), <0.25) with per-interval factors.
struct NoiseSpec {
  double sigma = 0.1;
  std::array<double, 4> factors{1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
};

/// Factors proportional to a device profile's per-level sigmas, normalized
/// by their maximum; the top level maps to the top magnitude interval.
NoiseSpec noise_from_profile(const DeviceProfile& profile, double sigma,
                             std::uint64_t seed);

/// S + N * max|S| with N_ij ~ N(0, (sigma * f_interval)^2). Returns S
/// unchanged (no RNG draws) when sigma == 0 or max|S| == 0.
Matrix inject_noise(const Matrix& tokens, const NoiseSpec& spec, Rng& rng);

/// Fixed linear probe standing in for the frozen model during prompt
/// tuning: logits = W * mean([S ; input]) + c, cross-entropy loss on
/// `target`. Only the prompt tokens train.
struct SurrogateTask {
  Matrix readout; // C x D
  Vector bias;    // C
  int target = 0;

  static SurrogateTask random(int classes, int dim, std::uint64_t seed);
  /// Readout rows proportional to class centroids (nearest-centroid probe).
  static SurrogateTask from_centroids(const Matrix& centroids, double gain);

  int classes() const { return static_cast<int>(readout.rows()); }
  int dim() const { return static_cast<int>(readout.cols()); }
};

struct ForwardResult {
  double loss = 0.0;
  Vector logits;
};

ForwardResult forward(const Matrix& prompt, const Matrix& input_tokens,
                      const SurrogateTask& task);

/// Analytic d(loss)/d(prompt) of `forward`. All rows are equal by the mean
/// pooling structure.
Matrix grad_tokens(const Matrix& prompt, const Matrix& input_tokens,
                   const SurrogateTask& task);

struct TuneConfig {
  int steps = 300;
  double lr = 0.5;
  int token_count = 10;
  NoiseSpec noise;
};

struct TuneTrace {
  std::vector<double> losses; // loss at the (noisy) evaluation point per step
};

/// SGD prompt tuning with per-step noise injection: evaluate the gradient at
/// the noise-injected tokens, apply it to the clean tokens. Tokens start at
/// N(0, 0.02^2), seeded by cfg.noise.seed.
VirtualTokenSet tune_prompt(const BufferedSample& sample,
                            const SurrogateTask& task, const TuneConfig& cfg,
                            TuneTrace* trace = nullptr);

/// Training log as CSV: step,loss
void write_tune_log(const TuneTrace& trace, const std::filesystem::path& path);

} // namespace nvpt
