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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nvpt/types.hpp"

namespace nvpt {

/// One buffered user sample: token embeddings plus their mean as a pooled
/// D-vector summary used for clustering.
struct BufferedSample {
  Matrix embedding; // T x D
  Vector summary;   // D, always the token mean of `embedding`
  std::string id;
  std::string payload;
  std::optional<int> domain_tag;

  static BufferedSample make(std::string id, Matrix embedding,
                             std::string payload = {},
                             std::optional<int> domain_tag = std::nullopt);
};

struct SelectionParams {
  int base_threshold = 20;  // b0
  double scale_factor = 1.5; // s
  int n_min = 2;
  int n_max = 10;
  int kmeans_max_iter = 100;
  /// Select only the largest cluster's representative (legacy behavior).
  bool largest_cluster_only = false;
};

/// Cluster count for a buffer of size b_s:
/// clamp(floor(n_min + s * log2(b_s / b0)), n_min, n_max).
int adaptive_k(std::int64_t buffer_size, int base_threshold,
               double scale_factor, int n_min, int n_max);

struct ClusterResult {
  std::vector<int> assignments; // per point, cluster index in [0, k)
  Matrix centroids;             // k x D
  int k = 0;
  /// Inertia recorded after each assignment phase; non-increasing.
  std::vector<double> inertia_trace;
};

/// Lloyd's algorithm with k-means++ seeding. Deterministic per seed. Empty
/// clusters are reseeded to the point farthest from its assigned centroid.
/// Throws std::invalid_argument when |points| < k or k < 1.
ClusterResult kmeans(const Matrix& points, int k, int max_iter,
                     std::uint64_t seed);

/// Index of the member with maximum cosine similarity to the centroid.
/// Ties break to the lowest index; zero-norm members rank lowest.
std::size_t representative_index(const Matrix& members, const Vector& centroid);

struct SelectResult {
  std::vector<BufferedSample> representatives;
  std::vector<BufferedSample> leftovers;
  std::vector<int> representative_clusters; // cluster index per representative
  std::vector<int> cluster_sizes;
  int k = 0;
};

/// Bounded sample buffer. Single writer; select_all drains it.
class DataBuffer {
public:
  explicit DataBuffer(std::size_t capacity, SelectionParams params = {});

  /// Throws StateError when the buffer is already full.
  void push(BufferedSample sample);

  bool full() const { return samples_.size() == capacity_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }
  const SelectionParams& params() const { return params_; }
  const std::vector<BufferedSample>& samples() const { return samples_; }

  /// Cluster pooled summaries, pick one representative per cluster, return
  /// the rest as leftovers, and empty the buffer. Throws StateError unless
  /// the buffer is full.
  SelectResult select_all(std::uint64_t seed);

private:
  std::size_t capacity_;
  SelectionParams params_;
  std::vector<BufferedSample> samples_;
};

/// JSON-lines ingestion:
/// {"id": str, "embedding": [[f32,...],...], "domain": int?, "payload": str?}
std::vector<BufferedSample> read_samples_jsonl(const std::filesystem::path& path);
void write_samples_jsonl(const std::vector<BufferedSample>& samples,
                         const std::filesystem::path& path);

/// Selection report: representative ids, cluster sizes, k.
void write_selection_report(const SelectResult& result,
                            const std::filesystem::path& path);

} // namespace nvpt
