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

#include "nvpt/workload.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "nvpt/errors.hpp"
#include "nvpt/rng.hpp"

namespace nvpt {

namespace {

void validate_spec(const WorkloadSpec& spec) {
  if (spec.num_domains < 1 || spec.samples_per_domain < 1 ||
      spec.queries_per_domain < 0 || spec.dim < 1 || spec.tokens < 1) {
    throw std::invalid_argument("workload spec: counts must be positive");
  }
  if (!(spec.separation > 0.0)) {
    throw std::invalid_argument("workload spec: separation must be > 0");
  }
}

// Random directions scaled to radius `separation`; any centroid closer than
// `separation` to an earlier one is redrawn.
Matrix draw_centroids(const WorkloadSpec& spec, Rng& rng) {
  Matrix centroids(spec.num_domains, spec.dim);
  const int max_attempts = 1000;
  for (int d = 0; d < spec.num_domains; ++d) {
    bool placed = false;
    for (int attempt = 0; attempt < max_attempts && !placed; ++attempt) {
      Vector dir(spec.dim);
      for (Eigen::Index j = 0; j < dir.size(); ++j) dir(j) = rng.gaussian();
      const double n = dir.norm();
      if (n == 0.0) continue;
      dir *= spec.separation / n;
      placed = true;
      for (int prev = 0; prev < d; ++prev) {
        if ((centroids.row(prev).transpose() - dir).norm() < spec.separation) {
          placed = false;
          break;
        }
      }
      if (placed) centroids.row(d) = dir.transpose();
    }
    if (!placed) {
      throw StateError("workload: cannot place " +
                       std::to_string(spec.num_domains) +
                       " centroids at separation " +
                       std::to_string(spec.separation) + " in dim " +
                       std::to_string(spec.dim));
    }
  }
  return centroids;
}

BufferedSample draw_sample(const WorkloadSpec& spec, const Matrix& centroids,
                           int domain, std::string id, Rng& rng) {
  Matrix tokens(spec.tokens, spec.dim);
  for (Eigen::Index t = 0; t < tokens.rows(); ++t) {
    for (Eigen::Index j = 0; j < tokens.cols(); ++j) {
      tokens(t, j) = centroids(domain, j) + rng.gaussian();
    }
  }
  return BufferedSample::make(std::move(id), std::move(tokens),
                              "domain-" + std::to_string(domain), domain);
}

} // namespace

Workload gen_workload(const WorkloadSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);

  Workload w;
  w.spec = spec;
  w.centroids = draw_centroids(spec, rng);

  // Round-robin over domains so any prefix of the stream is balanced.
  for (int i = 0; i < spec.samples_per_domain; ++i) {
    for (int d = 0; d < spec.num_domains; ++d) {
      w.train.push_back(draw_sample(
          spec, w.centroids, d,
          "d" + std::to_string(d) + "-s" + std::to_string(i), rng));
    }
  }
  for (int i = 0; i < spec.queries_per_domain; ++i) {
    for (int d = 0; d < spec.num_domains; ++d) {
      w.queries.push_back(draw_sample(
          spec, w.centroids, d,
          "q-d" + std::to_string(d) + "-" + std::to_string(i), rng));
    }
  }
  return w;
}

void write_workload(const Workload& w, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create workload directory: " + dir.string());

  write_samples_jsonl(w.train, dir / "train.jsonl");
  write_samples_jsonl(w.queries, dir / "queries.jsonl");

  nlohmann::json j;
  j["num_domains"] = w.spec.num_domains;
  j["samples_per_domain"] = w.spec.samples_per_domain;
  j["queries_per_domain"] = w.spec.queries_per_domain;
  j["dim"] = w.spec.dim;
  j["tokens"] = w.spec.tokens;
  j["separation"] = w.spec.separation;
  j["seed"] = w.spec.seed;
  std::ofstream out(dir / "workload.json");
  if (!out) throw IoError("cannot write workload.json");
  out << j.dump(2) << "\n";
}

WorkloadSpec workload_spec_from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open workload spec: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("workload spec parse error: ") + e.what());
  }
  WorkloadSpec spec;
  spec.num_domains = j.value("num_domains", spec.num_domains);
  spec.samples_per_domain = j.value("samples_per_domain", spec.samples_per_domain);
  spec.queries_per_domain = j.value("queries_per_domain", spec.queries_per_domain);
  spec.dim = j.value("dim", spec.dim);
  spec.tokens = j.value("tokens", spec.tokens);
  spec.separation = j.value("separation", spec.separation);
  spec.seed = j.value("seed", spec.seed);
  validate_spec(spec);
  return spec;
}

} // namespace nvpt
