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

#include "nvpt/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "nvpt/errors.hpp"

namespace nvpt {

NoiseSpec noise_from_profile(const DeviceProfile& profile, double sigma,
                             std::uint64_t seed) {
  profile.validate();
  const double peak = *std::max_element(profile.sigma_per_level.begin(),
                                        profile.sigma_per_level.end());
  NoiseSpec spec;
  spec.sigma = sigma;
  spec.seed = seed;
  if (peak > 0.0) {
    // Top level drives the top-magnitude interval. Intervals beyond the
    // level count reuse the lowest level's factor.
    const int levels = profile.num_levels;
    for (int i = 0; i < 4; ++i) {
      const int level = std::max(levels - 1 - i, 0);
      spec.factors[static_cast<std::size_t>(i)] =
          profile.sigma_per_level[static_cast<std::size_t>(level)] / peak;
    }
  }
  return spec;
}

namespace {

int interval_of(double normalized_abs) {
  if (normalized_abs > 0.75) return 0;
  if (normalized_abs >= 0.5) return 1; // 0.5 <= |s| <= 0.75
  if (normalized_abs >= 0.25) return 2; // 0.25 <= |s| < 0.5
  return 3;
}

} // namespace

Matrix inject_noise(const Matrix& tokens, const NoiseSpec& spec, Rng& rng) {
  if (spec.sigma == 0.0 || tokens.size() == 0) return tokens;
  const double peak = tokens.cwiseAbs().maxCoeff();
  if (peak == 0.0) return tokens;
  Matrix out = tokens;
  for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
    for (Eigen::Index j = 0; j < tokens.cols(); ++j) {
      const double normalized = std::abs(tokens(i, j)) / peak;
      const double factor =
          spec.factors[static_cast<std::size_t>(interval_of(normalized))];
      out(i, j) += rng.gaussian(0.0, spec.sigma * factor) * peak;
    }
  }
  return out;
}

SurrogateTask SurrogateTask::random(int classes, int dim, std::uint64_t seed) {
  if (classes < 2 || dim < 1) {
    throw std::invalid_argument("surrogate task: need >= 2 classes and dim >= 1");
  }
  Rng rng(seed);
  SurrogateTask task;
  task.readout.resize(classes, dim);
  const double std = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < task.readout.rows(); ++i)
    for (Eigen::Index j = 0; j < task.readout.cols(); ++j)
      task.readout(i, j) = rng.gaussian(0.0, std);
  task.bias = Vector::Zero(classes);
  for (Eigen::Index i = 0; i < task.bias.size(); ++i)
    task.bias(i) = rng.gaussian(0.0, 0.01);
  return task;
}

SurrogateTask SurrogateTask::from_centroids(const Matrix& centroids,
                                            double gain) {
  if (centroids.rows() < 2) {
    throw std::invalid_argument("surrogate task: need >= 2 centroids");
  }
  SurrogateTask task;
  task.readout = gain * centroids;
  task.bias = Vector::Zero(centroids.rows());
  return task;
}

namespace {

Vector pooled_hidden(const Matrix& prompt, const Matrix& input_tokens,
                     const SurrogateTask& task) {
  if (prompt.cols() != task.dim() ||
      (input_tokens.rows() > 0 && input_tokens.cols() != task.dim())) {
    throw std::invalid_argument("surrogate forward: dimension mismatch");
  }
  const double total =
      static_cast<double>(prompt.rows() + input_tokens.rows());
  if (total == 0.0) {
    throw std::invalid_argument("surrogate forward: no tokens");
  }
  Vector h = prompt.colwise().sum().transpose();
  if (input_tokens.rows() > 0) {
    h += input_tokens.colwise().sum().transpose();
  }
  return h / total;
}

Vector softmax(const Vector& logits) {
  const double peak = logits.maxCoeff();
  Vector e = (logits.array() - peak).exp();
  return e / e.sum();
}

} // namespace

ForwardResult forward(const Matrix& prompt, const Matrix& input_tokens,
                      const SurrogateTask& task) {
  if (task.target < 0 || task.target >= task.classes()) {
    throw std::invalid_argument("surrogate forward: target out of range");
  }
  ForwardResult r;
  const Vector h = pooled_hidden(prompt, input_tokens, task);
  r.logits = task.readout * h + task.bias;
  // Cross-entropy via log-sum-exp for stability.
  const double peak = r.logits.maxCoeff();
  const double lse = peak + std::log((r.logits.array() - peak).exp().sum());
  r.loss = lse - r.logits(task.target);
  return r;
}

Matrix grad_tokens(const Matrix& prompt, const Matrix& input_tokens,
                   const SurrogateTask& task) {
  if (task.target < 0 || task.target >= task.classes()) {
    throw std::invalid_argument("surrogate grad: target out of range");
  }
  const Vector h = pooled_hidden(prompt, input_tokens, task);
  Vector dlogits = softmax(task.readout * h + task.bias);
  dlogits(task.target) -= 1.0;
  const Vector dh = task.readout.transpose() * dlogits;
  const double total =
      static_cast<double>(prompt.rows() + input_tokens.rows());
  return (dh / total).transpose().replicate(prompt.rows(), 1);
}

VirtualTokenSet tune_prompt(const BufferedSample& sample,
                            const SurrogateTask& task, const TuneConfig& cfg,
                            TuneTrace* trace) {
  if (cfg.steps < 1 || cfg.lr <= 0.0 || cfg.token_count < 1) {
    throw std::invalid_argument("tune config: steps >= 1, lr > 0, tokens >= 1");
  }
  Rng rng(cfg.noise.seed);
  Matrix tokens(cfg.token_count, task.dim());
  for (Eigen::Index i = 0; i < tokens.rows(); ++i)
    for (Eigen::Index j = 0; j < tokens.cols(); ++j)
      tokens(i, j) = rng.gaussian(0.0, 0.02);

  for (int step = 0; step < cfg.steps; ++step) {
    const Matrix noisy = inject_noise(tokens, cfg.noise, rng);
    if (trace) trace->losses.push_back(forward(noisy, sample.embedding, task).loss);
    tokens -= cfg.lr * grad_tokens(noisy, sample.embedding, task);
  }

  VirtualTokenSet vts;
  vts.tokens = std::move(tokens);
  vts.id = sample.id;
  vts.domain_tag = sample.domain_tag;
  return vts;
}

void write_tune_log(const TuneTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write tune log: " + path.string());
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.losses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, trace.losses[i]);
    out << buf;
  }
}

} // namespace nvpt
