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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nvpt/errors.hpp"
#include "nvpt/tuning.hpp"
#include "oracles.hpp"

using namespace nvpt;

TEST_CASE("inject_noise passthrough cases") {
  Matrix tokens(2, 3);
  tokens << 0.5, -1.0, 0.25, 0.75, 0.1, -0.6;

  SUBCASE("sigma of zero returns the tokens bitwise and draws nothing") {
    Rng probe(1);
    const Matrix out = inject_noise(tokens, NoiseSpec{0.0, {1, 1, 1, 1}, 0}, probe);
    CHECK(out == tokens);
    // The RNG was not consumed: its next draw equals a fresh stream's first.
    CHECK(probe.next_u64() == Rng(1).next_u64());
  }
  SUBCASE("zero matrix is returned unchanged") {
    Rng rng(1);
    const Matrix zeros = Matrix::Zero(3, 3);
    CHECK(inject_noise(zeros, NoiseSpec{0.2, {1, 1, 1, 1}, 0}, rng) == zeros);
  }
}

TEST_CASE("inject_noise interval boundaries") {
  // Entries normalized by the max (2.0): 1.0, 0.76, 0.75, 0.5, 0.26, 0.25, 0.1.
  Matrix tokens(1, 7);
  tokens << 2.0, 1.52, 1.5, 1.0, 0.52, 0.5, 0.2;

  auto only_interval_changed = [&](int interval, const std::vector<int>& expect) {
    NoiseSpec spec;
    spec.sigma = 0.3;
    spec.factors = {0, 0, 0, 0};
    spec.factors[static_cast<std::size_t>(interval)] = 1.0;
    Rng rng(9);
    const Matrix out = inject_noise(tokens, spec, rng);
    for (Eigen::Index j = 0; j < tokens.cols(); ++j) {
      const bool changed = out(0, j) != tokens(0, j);
      CHECK(changed == (expect[static_cast<std::size_t>(j)] == 1));
    }
  };

  // |s| > 0.75 -> f1 (entries 1.0 and 0.76)
  only_interval_changed(0, {1, 1, 0, 0, 0, 0, 0});
  // 0.5 <= |s| <= 0.75 -> f2 (entries 0.75 and 0.5)
  only_interval_changed(1, {0, 0, 1, 1, 0, 0, 0});
  // 0.25 <= |s| < 0.5 -> f3 (entries 0.26 and 0.25)
  only_interval_changed(2, {0, 0, 0, 0, 1, 1, 0});
  // |s| < 0.25 -> f4 (entry 0.1)
  only_interval_changed(3, {0, 0, 0, 0, 0, 0, 1});
}

TEST_CASE("inject_noise interval choice is scale free") {
  Matrix tokens(1, 4);
  tokens << 1.0, 0.6, 0.3, 0.1;
  NoiseSpec spec;
  spec.sigma = 0.3;
  spec.factors = {1.0, 0, 0, 0};
  for (double alpha : {0.01, 1.0, 250.0}) {
    Rng rng(4);
    const Matrix out = inject_noise(Matrix(alpha * tokens), spec, rng);
    CHECK(out(0, 0) != alpha * tokens(0, 0));
    for (int j = 1; j < 4; ++j) CHECK(out(0, j) == alpha * tokens(0, j));
  }
}

TEST_CASE("inject_noise per-interval std tracks sigma*f*max") {
  // One entry pinned in each interval; max|S| = 2.5.
  Matrix tokens(1, 4);
  tokens << 2.5, 1.5, 0.8, 0.3; // normalized: 1.0, 0.6, 0.32, 0.12
  NoiseSpec spec;
  spec.sigma = 0.1;
  spec.factors = {1.0, 0.8, 0.6, 0.4};
  Rng rng(12);

  const int draws = 30000;
  std::vector<std::vector<double>> deltas(4);
  for (int i = 0; i < draws; ++i) {
    const Matrix out = inject_noise(tokens, spec, rng);
    for (int j = 0; j < 4; ++j) {
      deltas[static_cast<std::size_t>(j)].push_back(out(0, j) - tokens(0, j));
    }
  }
  for (int j = 0; j < 4; ++j) {
    const auto stats = oracle::sample_stats(deltas[static_cast<std::size_t>(j)]);
    const double expected = 0.1 * spec.factors[static_cast<std::size_t>(j)] * 2.5;
    CHECK(std::abs(stats.stddev / expected - 1.0) < 0.03);
  }
}

TEST_CASE("surrogate forward matches the scalar oracle") {
  Rng rng(31);
  const int dim = 8, classes = 3, prompt_rows = 2, input_rows = 3;
  SurrogateTask task = SurrogateTask::random(classes, dim, 77);
  task.target = 1;

  Matrix prompt(prompt_rows, dim), input(input_rows, dim);
  for (Eigen::Index i = 0; i < prompt.rows(); ++i)
    for (Eigen::Index j = 0; j < prompt.cols(); ++j) prompt(i, j) = rng.gaussian();
  for (Eigen::Index i = 0; i < input.rows(); ++i)
    for (Eigen::Index j = 0; j < input.cols(); ++j) input(i, j) = rng.gaussian();

  std::vector<std::vector<double>> p(prompt_rows, std::vector<double>(dim));
  std::vector<std::vector<double>> in(input_rows, std::vector<double>(dim));
  std::vector<std::vector<double>> w(classes, std::vector<double>(dim));
  std::vector<double> bias(classes);
  for (int i = 0; i < prompt_rows; ++i)
    for (int j = 0; j < dim; ++j) p[i][j] = prompt(i, j);
  for (int i = 0; i < input_rows; ++i)
    for (int j = 0; j < dim; ++j) in[i][j] = input(i, j);
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < dim; ++j) w[c][j] = task.readout(c, j);
    bias[static_cast<std::size_t>(c)] = task.bias(c);
  }

  const double expected = oracle::forward_loss_scalar(p, in, w, bias, 1);
  CHECK(forward(prompt, input, task).loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("surrogate forward limit cases") {
  SUBCASE("symmetric logits give loss ln C") {
    SurrogateTask task = SurrogateTask::random(5, 6, 3);
    task.bias = Vector::Zero(5);
    task.target = 2;
    const auto r = forward(Matrix::Zero(2, 6), Matrix::Zero(3, 6), task);
    CHECK(r.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(r.logits == Vector::Zero(5));
  }
  SUBCASE("a dominant target logit drives loss to zero") {
    SurrogateTask task = SurrogateTask::random(4, 6, 3);
    task.bias = Vector::Zero(4);
    task.bias(1) = 45.0;
    task.target = 1;
    const auto r = forward(Matrix::Zero(1, 6), Matrix::Zero(1, 6), task);
    CHECK(r.loss < 1e-15);
  }
  SUBCASE("shape and target validation") {
    SurrogateTask task = SurrogateTask::random(3, 4, 1);
    task.target = 9;
    CHECK_THROWS_AS(forward(Matrix::Zero(1, 4), Matrix::Zero(1, 4), task),
                    std::invalid_argument);
    task.target = 0;
    CHECK_THROWS_AS(forward(Matrix::Zero(1, 5), Matrix::Zero(1, 4), task),
                    std::invalid_argument);
  }
}

TEST_CASE("grad_tokens matches central finite differences") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 2 + static_cast<int>(rng.next_u64() % 15);   // <= 16
    const int classes = 2 + static_cast<int>(rng.next_u64() % 4); // <= 5
    const int prompt_rows = 1 + static_cast<int>(rng.next_u64() % 4); // <= 4
    const int input_rows = static_cast<int>(rng.next_u64() % 4);

    SurrogateTask task = SurrogateTask::random(classes, dim, rng.next_u64());
    task.target = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(classes));
    Matrix prompt(prompt_rows, dim), input(input_rows, dim);
    for (Eigen::Index i = 0; i < prompt.rows(); ++i)
      for (Eigen::Index j = 0; j < prompt.cols(); ++j) prompt(i, j) = rng.gaussian();
    for (Eigen::Index i = 0; i < input.rows(); ++i)
      for (Eigen::Index j = 0; j < input.cols(); ++j) input(i, j) = rng.gaussian();

    const Matrix analytic = grad_tokens(prompt, input, task);
    Matrix numeric(prompt_rows, dim);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < prompt.rows(); ++i) {
      for (Eigen::Index j = 0; j < prompt.cols(); ++j) {
        Matrix hi = prompt, lo = prompt;
        hi(i, j) += h;
        lo(i, j) -= h;
        numeric(i, j) =
            (forward(hi, input, task).loss - forward(lo, input, task).loss) /
            (2 * h);
      }
    }
    const double rel = (analytic - numeric).norm() / std::max(analytic.norm(), 1e-12);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("grad_tokens structure") {
  SurrogateTask task = SurrogateTask::random(3, 5, 7);
  task.target = 0;
  Rng rng(8);
  Matrix prompt(4, 5), input(2, 5);
  for (Eigen::Index i = 0; i < prompt.rows(); ++i)
    for (Eigen::Index j = 0; j < prompt.cols(); ++j) prompt(i, j) = rng.gaussian();
  for (Eigen::Index i = 0; i < input.rows(); ++i)
    for (Eigen::Index j = 0; j < input.cols(); ++j) input(i, j) = rng.gaussian();

  SUBCASE("rows are identical under mean pooling") {
    const Matrix g = grad_tokens(prompt, input, task);
    for (Eigen::Index r = 1; r < g.rows(); ++r) {
      CHECK((g.row(r) - g.row(0)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("gradient vanishes at a saturated minimum") {
    task.bias = Vector::Zero(3);
    task.bias(0) = 60.0;
    const Matrix g = grad_tokens(Matrix::Zero(2, 5), Matrix::Zero(1, 5), task);
    CHECK(g.norm() < 1e-10);
  }
}

namespace {

BufferedSample toy_sample(int dim, std::uint64_t seed, int domain) {
  Rng rng(seed);
  Matrix emb(3, dim);
  for (Eigen::Index i = 0; i < emb.rows(); ++i)
    for (Eigen::Index j = 0; j < emb.cols(); ++j)
      emb(i, j) = (j == domain ? 6.0 : 0.0) + rng.gaussian();
  return BufferedSample::make("toy", std::move(emb), "", domain);
}

} // namespace

TEST_CASE("tune_prompt with sigma 0 equals a hand-rolled plain tuner") {
  const int dim = 10;
  SurrogateTask task = SurrogateTask::random(3, dim, 5);
  task.target = 1;
  const BufferedSample sample = toy_sample(dim, 61, 1);

  TuneConfig cfg;
  cfg.steps = 25;
  cfg.lr = 0.4;
  cfg.token_count = 4;
  cfg.noise.sigma = 0.0;
  cfg.noise.seed = 71;
  const VirtualTokenSet tuned = tune_prompt(sample, task, cfg);

  // Plain SGD reference: same init draws, gradient at the clean tokens.
  Rng rng(71);
  Matrix tokens(4, dim);
  for (Eigen::Index i = 0; i < tokens.rows(); ++i)
    for (Eigen::Index j = 0; j < tokens.cols(); ++j)
      tokens(i, j) = rng.gaussian(0.0, 0.02);
  for (int step = 0; step < 25; ++step) {
    tokens -= 0.4 * grad_tokens(tokens, sample.embedding, task);
  }
  CHECK(tuned.tokens == tokens);
  CHECK(tuned.id == "toy");
  CHECK(tuned.domain_tag == 1);
}

TEST_CASE("tune_prompt learns a separable task") {
  // The input tokens are uninformative noise, so the prompt alone must move
  // the readout toward the target class.
  const int dim = 12;
  SurrogateTask task = SurrogateTask::random(3, dim, 91);
  task.target = 2;
  Rng srng(62);
  Matrix emb(3, dim);
  for (Eigen::Index i = 0; i < emb.rows(); ++i)
    for (Eigen::Index j = 0; j < emb.cols(); ++j) emb(i, j) = srng.gaussian();
  const BufferedSample sample = BufferedSample::make("toy", emb, "", 2);

  TuneConfig cfg;
  cfg.steps = 200;
  cfg.lr = 0.5;
  cfg.token_count = 4;
  cfg.noise.sigma = 0.1;
  cfg.noise.seed = 13;

  TuneTrace trace;
  tune_prompt(sample, task, cfg, &trace);
  REQUIRE(trace.losses.size() == 200);
  CHECK(trace.losses.back() < 0.1 * trace.losses.front());

  // Different seeds give different prompts that both train down.
  TuneConfig cfg2 = cfg;
  cfg2.noise.seed = 14;
  TuneTrace trace2;
  const auto a = tune_prompt(sample, task, cfg, nullptr);
  const auto b = tune_prompt(sample, task, cfg2, &trace2);
  CHECK(a.tokens != b.tokens);
  CHECK(trace2.losses.back() < 0.1 * trace2.losses.front());
}

TEST_CASE("tune log CSV") {
  TuneTrace trace;
  trace.losses = {1.5, 0.7, 0.3};
  const auto dir = std::filesystem::temp_directory_path() / "nvpt_tune_test";
  std::filesystem::create_directories(dir);
  write_tune_log(trace, dir / "log.csv");
  std::ifstream in(dir / "log.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,loss");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("noise factors derived from a device profile") {
  const NoiseSpec spec = noise_from_profile(builtin_profile("nvm-2"), 0.1, 3);
  CHECK(spec.sigma == 0.1);
  // Levels (0.0067, 0.0135, 0.0135, 0.0067) normalized by 0.0135, top level
  // feeding the top-magnitude interval.
  CHECK(spec.factors[0] == doctest::Approx(0.0067 / 0.0135));
  CHECK(spec.factors[1] == doctest::Approx(1.0));
  CHECK(spec.factors[2] == doctest::Approx(1.0));
  CHECK(spec.factors[3] == doctest::Approx(0.0067 / 0.0135));
}
