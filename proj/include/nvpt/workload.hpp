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
#include <vector>

#include "nvpt/selection.hpp"
#include "nvpt/types.hpp"

namespace nvpt {

/// Synthetic domain-clustered sample stream with known ground truth.
/// Domain centroids sit on a sphere with pairwise distance at least
/// `separation` times the within-domain (unit) std.
struct WorkloadSpec {
  int num_domains = 5;
  int samples_per_domain = 12;
  int queries_per_domain = 10;
  int dim = 64;
  int tokens = 10;
  double separation = 4.0;
  std::uint64_t seed = 1;
};

struct Workload {
  WorkloadSpec spec;
  Matrix centroids;                  // num_domains x dim
  std::vector<BufferedSample> train; // round-robin over domains
  std::vector<BufferedSample> queries;
};

/// Deterministic per spec.seed. Throws std::invalid_argument on bad counts.
Workload gen_workload(const WorkloadSpec& spec);

/// Writes train.jsonl, queries.jsonl and workload.json into `dir`.
void write_workload(const Workload& w, const std::filesystem::path& dir);

WorkloadSpec workload_spec_from_json_file(const std::filesystem::path& path);

} // namespace nvpt
