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

#include <filesystem>
#include <set>

#include "nvpt/errors.hpp"
#include "nvpt/rng.hpp"
#include "nvpt/selection.hpp"
#include "oracles.hpp"

using namespace nvpt;

TEST_CASE("adaptive_k formula") {
  CHECK(adaptive_k(20, 20, 1.5, 2, 10) == 2);
  CHECK(adaptive_k(80, 20, 1.5, 2, 10) == 5);   // floor(2 + 1.5*2) = 5
  CHECK(adaptive_k(1000000, 20, 1.5, 2, 10) == 10);
  CHECK(adaptive_k(1, 20, 1.5, 2, 10) == 2);    // clamps from below

  SUBCASE("monotone non-decreasing in the buffer size") {
    int prev = 0;
    for (int b = 1; b <= 5000; ++b) {
      const int k = adaptive_k(b, 20, 1.5, 2, 10);
      CHECK(k >= prev);
      CHECK(k >= 2);
      CHECK(k <= 10);
      prev = k;
    }
  }
  SUBCASE("argument errors") {
    CHECK_THROWS_AS(adaptive_k(0, 20, 1.5, 2, 10), std::invalid_argument);
    CHECK_THROWS_AS(adaptive_k(20, 0, 1.5, 2, 10), std::invalid_argument);
    CHECK_THROWS_AS(adaptive_k(20, 20, 1.5, 5, 2), std::invalid_argument);
  }
}

namespace {

Matrix two_blobs(int per_blob, int dim, double distance, std::uint64_t seed,
                 std::vector<int>* labels) {
  Rng rng(seed);
  Matrix points(2 * per_blob, dim);
  for (int i = 0; i < 2 * per_blob; ++i) {
    const int blob = i < per_blob ? 0 : 1;
    for (int j = 0; j < dim; ++j) {
      const double center = (j == 0) ? (blob == 0 ? 0.0 : distance) : 0.0;
      points(i, j) = center + rng.gaussian();
    }
    if (labels) labels->push_back(blob);
  }
  return points;
}

} // namespace

TEST_CASE("kmeans basics") {
  SUBCASE("k distinct points cluster to themselves") {
    Matrix points(3, 2);
    points << 0, 0, 10, 0, 0, 10;
    const auto r = kmeans(points, 3, 50, 1);
    CHECK(r.inertia_trace.back() == 0.0);
    std::set<int> used(r.assignments.begin(), r.assignments.end());
    CHECK(used.size() == 3);
  }
  SUBCASE("k=1 centroid is the mean") {
    Matrix points(4, 2);
    points << 1, 2, 3, 4, 5, 6, 7, 8;
    const auto r = kmeans(points, 1, 50, 1);
    CHECK(r.centroids.row(0)(0) == doctest::Approx(4.0));
    CHECK(r.centroids.row(0)(1) == doctest::Approx(5.0));
  }
  SUBCASE("well-separated blobs recover generator labels") {
    std::vector<int> labels;
    const Matrix points = two_blobs(40, 6, 10.0, 7, &labels);
    const auto r = kmeans(points, 2, 100, 3);
    // Map cluster index to majority label, then require exact agreement.
    const int c0 = r.assignments[0];
    for (std::size_t i = 0; i < labels.size(); ++i) {
      CHECK((r.assignments[i] == c0) == (labels[i] == labels[0]));
    }
  }
  SUBCASE("inertia trace never increases") {
    std::vector<int> labels;
    const Matrix points = two_blobs(30, 4, 3.0, 9, &labels);
    const auto r = kmeans(points, 4, 100, 5);
    for (std::size_t i = 1; i < r.inertia_trace.size(); ++i) {
      CHECK(r.inertia_trace[i] <= r.inertia_trace[i - 1] * (1 + 1e-12) + 1e-12);
    }
  }
  SUBCASE("assignments point to the nearest centroid at termination") {
    std::vector<int> labels;
    const Matrix points = two_blobs(25, 3, 4.0, 11, &labels);
    const auto r = kmeans(points, 3, 100, 13);
    for (Eigen::Index p = 0; p < points.rows(); ++p) {
      const double assigned =
          (points.row(p) - r.centroids.row(r.assignments[p])).squaredNorm();
      for (int c = 0; c < r.k; ++c) {
        CHECK(assigned <=
              (points.row(p) - r.centroids.row(c)).squaredNorm() + 1e-9);
      }
    }
  }
  SUBCASE("determinism and errors") {
    std::vector<int> labels;
    const Matrix points = two_blobs(20, 3, 2.0, 15, &labels);
    const auto a = kmeans(points, 3, 100, 21);
    const auto b = kmeans(points, 3, 100, 21);
    CHECK(a.assignments == b.assignments);
    CHECK(a.centroids == b.centroids);
    CHECK_THROWS_AS(kmeans(points, 0, 100, 1), std::invalid_argument);
    CHECK_THROWS_AS(kmeans(points, 41, 100, 1), std::invalid_argument);
  }
  SUBCASE("duplicate points still fill every cluster") {
    Matrix points = Matrix::Zero(10, 3);
    const auto r = kmeans(points, 3, 100, 2);
    std::vector<int> counts(3, 0);
    for (int a : r.assignments) ++counts[static_cast<std::size_t>(a)];
    for (int c : counts) CHECK(c > 0);
  }
}

TEST_CASE("representative selection by cosine similarity") {
  SUBCASE("hand-computed cosines") {
    Matrix members(3, 2);
    members << 1, 0, 0.9, 0.1, 0, 1;
    Vector centroid(2);
    centroid << 1, 0;
    CHECK(representative_index(members, centroid) == 0);
  }
  SUBCASE("centroid member wins") {
    Matrix members(3, 3);
    members << 1, 2, 2, 4, 0, 1, 2, 4, 4;
    Vector centroid(3);
    centroid << 1, 2, 2;
    CHECK(representative_index(members, centroid) == 0);
  }
  SUBCASE("collinear members tie-break to the lowest index") {
    Matrix members(3, 2);
    members << 2, 0, 5, 0, 0.5, 0;
    Vector centroid(2);
    centroid << 3, 0;
    CHECK(representative_index(members, centroid) == 0);
  }
  SUBCASE("zero-norm members rank last") {
    Matrix members(2, 2);
    members << 0, 0, 0, 1;
    Vector centroid(2);
    centroid << 0, 1;
    CHECK(representative_index(members, centroid) == 1);
  }
  SUBCASE("errors") {
    Vector centroid(2);
    centroid << 1, 0;
    CHECK_THROWS_AS(representative_index(Matrix(0, 2), centroid),
                    std::invalid_argument);
    CHECK_THROWS_AS(representative_index(Matrix::Zero(2, 3), centroid),
                    std::invalid_argument);
  }
}

namespace {

BufferedSample domain_sample(int domain, int index, Rng& rng, int tokens = 3,
                             int dim = 8, double spread = 12.0) {
  Matrix emb(tokens, dim);
  for (Eigen::Index t = 0; t < emb.rows(); ++t)
    for (Eigen::Index j = 0; j < emb.cols(); ++j)
      emb(t, j) = (j == domain ? spread : 0.0) + rng.gaussian();
  return BufferedSample::make("d" + std::to_string(domain) + "-" + std::to_string(index),
                              std::move(emb), "", domain);
}

} // namespace

TEST_CASE("buffered sample summary is the token mean") {
  Matrix emb(2, 3);
  emb << 1, 2, 3, 3, 4, 5;
  const auto s = BufferedSample::make("x", emb);
  CHECK(s.summary(0) == doctest::Approx(2.0));
  CHECK(s.summary(1) == doctest::Approx(3.0));
  CHECK(s.summary(2) == doctest::Approx(4.0));
}

TEST_CASE("data buffer lifecycle") {
  Rng rng(31);
  DataBuffer buffer(20);

  CHECK_THROWS_AS(buffer.select_all(1), StateError);
  for (int i = 0; i < 20; ++i) buffer.push(domain_sample(i % 2, i, rng));
  CHECK(buffer.full());
  CHECK_THROWS_AS(buffer.push(domain_sample(0, 99, rng)), StateError);

  const auto result = buffer.select_all(5);
  CHECK(result.k == 2);
  CHECK(result.representatives.size() == 2);
  CHECK(result.leftovers.size() == 18);
  CHECK(buffer.size() == 0);

  // Disjoint, complete partition of the original ids.
  std::set<std::string> ids;
  for (const auto& s : result.representatives) ids.insert(s.id);
  for (const auto& s : result.leftovers) ids.insert(s.id);
  CHECK(ids.size() == 20);

  // Each representative sits in its own cluster.
  std::set<int> clusters(result.representative_clusters.begin(),
                         result.representative_clusters.end());
  CHECK(clusters.size() == 2);
}

TEST_CASE("selection on 25 samples across 3 separated domains") {
  Rng rng(41);
  DataBuffer buffer(25);
  for (int i = 0; i < 25; ++i) buffer.push(domain_sample(i % 3, i, rng));
  const auto result = buffer.select_all(7);
  CHECK(result.k == 2); // floor(2 + 1.5*log2(25/20)) = 2
  CHECK(result.representatives.size() == 2);
  CHECK(result.representative_clusters[0] != result.representative_clusters[1]);
}

TEST_CASE("identical samples select the first by tie-break") {
  DataBuffer buffer(20);
  Matrix emb = Matrix::Constant(2, 4, 1.5);
  for (int i = 0; i < 20; ++i) {
    buffer.push(BufferedSample::make("s" + std::to_string(i), emb));
  }
  const auto result = buffer.select_all(3);
  CHECK(result.representatives.size() == 2);
  std::set<std::string> reps;
  for (const auto& r : result.representatives) reps.insert(r.id);
  CHECK(reps == std::set<std::string>{"s0", "s1"});
}

TEST_CASE("largest-cluster-only legacy mode") {
  Rng rng(51);
  SelectionParams params;
  params.largest_cluster_only = true;
  DataBuffer buffer(20, params);
  // 14 samples in domain 0, 6 in domain 1: domain 0 is the larger cluster.
  for (int i = 0; i < 14; ++i) buffer.push(domain_sample(0, i, rng));
  for (int i = 0; i < 6; ++i) buffer.push(domain_sample(1, 100 + i, rng));
  const auto result = buffer.select_all(9);
  CHECK(result.representatives.size() == 1);
  CHECK(result.representatives[0].domain_tag == 0);
  CHECK(result.leftovers.size() == 19);
}

TEST_CASE("sample JSONL round trip and report") {
  const auto dir = std::filesystem::temp_directory_path() / "nvpt_sel_test";
  std::filesystem::create_directories(dir);

  Rng rng(61);
  std::vector<BufferedSample> samples;
  for (int i = 0; i < 5; ++i) samples.push_back(domain_sample(i % 2, i, rng));
  samples[3].payload.clear();

  write_samples_jsonl(samples, dir / "s.jsonl");
  const auto back = read_samples_jsonl(dir / "s.jsonl");
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].id == samples[i].id);
    CHECK(back[i].domain_tag == samples[i].domain_tag);
    // Embeddings are stored as f32.
    CHECK((back[i].embedding - samples[i].embedding).cwiseAbs().maxCoeff() < 1e-5);
  }
  CHECK_THROWS_AS(read_samples_jsonl(dir / "missing.jsonl"), IoError);

  DataBuffer buffer(5);
  for (auto& s : back) buffer.push(std::move(s));
  SelectionParams defaults;
  const auto result = buffer.select_all(1);
  write_selection_report(result, dir / "report.json");
  CHECK(std::filesystem::exists(dir / "report.json"));
}
