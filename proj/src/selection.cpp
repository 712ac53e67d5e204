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

#include "nvpt/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "nvpt/errors.hpp"
#include "nvpt/rng.hpp"

namespace nvpt {

BufferedSample BufferedSample::make(std::string id, Matrix embedding,
                                    std::string payload,
                                    std::optional<int> domain_tag) {
  if (embedding.rows() < 1 || embedding.cols() < 1) {
    throw std::invalid_argument("sample embedding must be non-empty");
  }
  BufferedSample s;
  s.summary = embedding.colwise().mean().transpose();
  s.embedding = std::move(embedding);
  s.id = std::move(id);
  s.payload = std::move(payload);
  s.domain_tag = domain_tag;
  return s;
}

int adaptive_k(std::int64_t buffer_size, int base_threshold,
               double scale_factor, int n_min, int n_max) {
  if (buffer_size < 1 || base_threshold < 1) {
    throw std::invalid_argument("adaptive_k: buffer size and base threshold must be positive");
  }
  if (n_min > n_max) {
    throw std::invalid_argument("adaptive_k: n_min must not exceed n_max");
  }
  const double raw =
      n_min + scale_factor * std::log2(static_cast<double>(buffer_size) /
                                       static_cast<double>(base_threshold));
  const auto floored = static_cast<std::int64_t>(std::floor(raw));
  return static_cast<int>(std::clamp<std::int64_t>(floored, n_min, n_max));
}

namespace {

double sq_dist(const Matrix& points, Eigen::Index p, const Matrix& centroids,
               Eigen::Index c) {
  return (points.row(p) - centroids.row(c)).squaredNorm();
}

// k-means++: first center uniform, the rest by squared-distance sampling.
Matrix seed_centroids(const Matrix& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<double> d2(static_cast<std::size_t>(n),
                         std::numeric_limits<double>::infinity());

  Eigen::Index first = static_cast<Eigen::Index>(rng.next_u64() %
                                                 static_cast<std::uint64_t>(n));
  centroids.row(0) = points.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      d2[static_cast<std::size_t>(p)] =
          std::min(d2[static_cast<std::size_t>(p)], sq_dist(points, p, centroids, c - 1));
      total += d2[static_cast<std::size_t>(p)];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index p = 0; p < n; ++p) {
        acc += d2[static_cast<std::size_t>(p)];
        if (acc >= r) {
          pick = p;
          break;
        }
      }
    } else {
      // All points coincide with chosen centers; any pick works.
      pick = static_cast<Eigen::Index>(rng.next_u64() %
                                       static_cast<std::uint64_t>(n));
    }
    centroids.row(c) = points.row(pick);
  }
  return centroids;
}

} // namespace

ClusterResult kmeans(const Matrix& points, int k, int max_iter,
                     std::uint64_t seed) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (n < k) throw std::invalid_argument("kmeans: need at least k points");
  if (max_iter < 1) throw std::invalid_argument("kmeans: max_iter must be >= 1");

  Rng rng(seed);
  ClusterResult result;
  result.k = k;
  result.centroids = seed_centroids(points, k, rng);
  result.assignments.assign(static_cast<std::size_t>(n), -1);

  std::vector<int> prev(result.assignments);
  for (int iter = 0; iter < max_iter; ++iter) {
    // Assignment phase; ties go to the lowest centroid index.
    double inertia = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      int best = 0;
      double best_d = sq_dist(points, p, result.centroids, 0);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(points, p, result.centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      result.assignments[static_cast<std::size_t>(p)] = best;
      inertia += best_d;
    }
    result.inertia_trace.push_back(inertia);
    if (result.assignments == prev) break;
    prev = result.assignments;

    // Update phase.
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index p = 0; p < n; ++p) {
      const int c = result.assignments[static_cast<std::size_t>(p)];
      sums.row(c) += points.row(p);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        result.centroids.row(c) =
            sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Reseed an empty cluster to the point farthest from its centroid.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index p = 0; p < n; ++p) {
          const int a = result.assignments[static_cast<std::size_t>(p)];
          const double d = sq_dist(points, p, result.centroids, a);
          if (d > far_d) {
            far_d = d;
            far = p;
          }
        }
        result.centroids.row(c) = points.row(far);
      }
    }
  }

  // With exact distance ties (duplicate points) a cluster can still end
  // empty because reassignment always prefers the lowest index. Move the
  // farthest point of an over-full cluster into each empty one.
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (int a : result.assignments) ++sizes[static_cast<std::size_t>(a)];
  for (int c = 0; c < k; ++c) {
    if (sizes[static_cast<std::size_t>(c)] > 0) continue;
    Eigen::Index pick = -1;
    double far_d = -1.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      const int a = result.assignments[static_cast<std::size_t>(p)];
      if (sizes[static_cast<std::size_t>(a)] < 2) continue;
      const double d = sq_dist(points, p, result.centroids, a);
      if (d > far_d) {
        far_d = d;
        pick = p;
      }
    }
    --sizes[static_cast<std::size_t>(result.assignments[static_cast<std::size_t>(pick)])];
    result.assignments[static_cast<std::size_t>(pick)] = c;
    ++sizes[static_cast<std::size_t>(c)];
    result.centroids.row(c) = points.row(pick);
  }
  return result;
}

std::size_t representative_index(const Matrix& members, const Vector& centroid) {
  if (members.rows() == 0) {
    throw std::invalid_argument("representative_index: empty cluster");
  }
  if (members.cols() != centroid.size()) {
    throw std::invalid_argument("representative_index: dimension mismatch");
  }
  const double cnorm = centroid.norm();
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; m < members.rows(); ++m) {
    const double mnorm = members.row(m).norm();
    double sim;
    if (mnorm == 0.0) {
      sim = -std::numeric_limits<double>::infinity();
    } else if (cnorm == 0.0) {
      sim = 0.0;
    } else {
      sim = members.row(m).dot(centroid.transpose()) / (mnorm * cnorm);
    }
    if (sim > best_sim) {
      best_sim = sim;
      best = static_cast<std::size_t>(m);
    }
  }
  return best;
}

DataBuffer::DataBuffer(std::size_t capacity, SelectionParams params)
    : capacity_(capacity), params_(params) {
  if (capacity_ < 1) {
    throw std::invalid_argument("buffer capacity must be >= 1");
  }
}

void DataBuffer::push(BufferedSample sample) {
  if (full()) throw StateError("buffer is full");
  samples_.push_back(std::move(sample));
}

SelectResult DataBuffer::select_all(std::uint64_t seed) {
  if (!full()) {
    throw StateError("select_all requires a full buffer (" +
                     std::to_string(samples_.size()) + "/" +
                     std::to_string(capacity_) + ")");
  }
  const int k = adaptive_k(static_cast<std::int64_t>(capacity_),
                           params_.base_threshold, params_.scale_factor,
                           params_.n_min, params_.n_max);

  Matrix pooled(static_cast<Eigen::Index>(samples_.size()),
                samples_.front().summary.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    pooled.row(static_cast<Eigen::Index>(i)) = samples_[i].summary.transpose();
  }
  const ClusterResult clusters =
      kmeans(pooled, k, params_.kmeans_max_iter, seed);

  SelectResult result;
  result.k = k;
  result.cluster_sizes.assign(static_cast<std::size_t>(k), 0);
  for (int a : clusters.assignments) {
    ++result.cluster_sizes[static_cast<std::size_t>(a)];
  }

  std::vector<int> wanted_clusters;
  if (params_.largest_cluster_only) {
    const auto it =
        std::max_element(result.cluster_sizes.begin(), result.cluster_sizes.end());
    wanted_clusters.push_back(
        static_cast<int>(std::distance(result.cluster_sizes.begin(), it)));
  } else {
    for (int c = 0; c < k; ++c) wanted_clusters.push_back(c);
  }

  std::vector<std::size_t> rep_indices;
  for (int c : wanted_clusters) {
    std::vector<std::size_t> member_ids;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      if (clusters.assignments[i] == c) member_ids.push_back(i);
    }
    if (member_ids.empty()) continue; // cannot happen after reseeding
    Matrix members(static_cast<Eigen::Index>(member_ids.size()), pooled.cols());
    for (std::size_t m = 0; m < member_ids.size(); ++m) {
      members.row(static_cast<Eigen::Index>(m)) =
          pooled.row(static_cast<Eigen::Index>(member_ids[m]));
    }
    const Vector centroid = clusters.centroids.row(c).transpose();
    const std::size_t local = representative_index(members, centroid);
    rep_indices.push_back(member_ids[local]);
    result.representative_clusters.push_back(c);
  }

  std::vector<bool> is_rep(samples_.size(), false);
  for (std::size_t i : rep_indices) is_rep[i] = true;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!is_rep[i]) result.leftovers.push_back(std::move(samples_[i]));
  }
  for (std::size_t i : rep_indices) {
    result.representatives.push_back(std::move(samples_[i]));
  }
  samples_.clear();
  return result;
}

std::vector<BufferedSample> read_samples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sample file: " + path.string());
  std::vector<BufferedSample> samples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("sample file line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      const auto rows = j.at("embedding").get<std::vector<std::vector<double>>>();
      if (rows.empty() || rows.front().empty()) {
        throw std::invalid_argument("empty embedding");
      }
      Matrix emb(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(rows.front().size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.front().size()) {
          throw std::invalid_argument("ragged embedding rows");
        }
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
          emb(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
      }
      std::optional<int> tag;
      if (j.contains("domain") && !j["domain"].is_null()) {
        tag = j["domain"].get<int>();
      }
      samples.push_back(BufferedSample::make(
          j.at("id").get<std::string>(), std::move(emb),
          j.value("payload", std::string{}), tag));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("sample file line " + std::to_string(lineno) +
                                  ": " + e.what());
    }
  }
  return samples;
}

void write_samples_jsonl(const std::vector<BufferedSample>& samples,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sample file: " + path.string());
  for (const auto& s : samples) {
    nlohmann::json j;
    j["id"] = s.id;
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < s.embedding.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < s.embedding.cols(); ++c) {
        row.push_back(static_cast<float>(s.embedding(r, c)));
      }
      rows.push_back(std::move(row));
    }
    j["embedding"] = std::move(rows);
    if (s.domain_tag) j["domain"] = *s.domain_tag;
    if (!s.payload.empty()) j["payload"] = s.payload;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("short write to sample file: " + path.string());
}

void write_selection_report(const SelectResult& result,
                            const std::filesystem::path& path) {
  nlohmann::json j;
  j["k"] = result.k;
  j["cluster_sizes"] = result.cluster_sizes;
  auto reps = nlohmann::json::array();
  for (std::size_t i = 0; i < result.representatives.size(); ++i) {
    nlohmann::json r;
    r["id"] = result.representatives[i].id;
    r["cluster"] = result.representative_clusters[i];
    if (result.representatives[i].domain_tag) {
      r["domain"] = *result.representatives[i].domain_tag;
    }
    reps.push_back(std::move(r));
  }
  j["representatives"] = std::move(reps);
  j["leftover_count"] = result.leftovers.size();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write selection report: " + path.string());
  out << j.dump(2) << "\n";
}

} // namespace nvpt
