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
#include <string>
#include <vector>

#include "nvpt/device_models.hpp"
#include "nvpt/store.hpp"
#include "nvpt/tuning.hpp"
#include "nvpt/workload.hpp"

namespace nvpt {

enum class Method { kSsa, kMips };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// Everything one end-to-end run needs besides the workload.
struct PipelineConfig {
  int buffer_size = 20;
  double sigma = 0.1; // write-time variation knob
  DeviceProfile profile = builtin_profile("nvm-3");
  Method method = Method::kSsa;
  bool noise_aware = true;
  WriteVerifyPolicy write_verify;
  SelectionParams selection;
  BitSliceLayout layout;
  SearchConfig search;

  int code_dim = 48;
  int ae_pretrain_epochs = 120;
  int ae_update_epochs = 40;
  double ae_lr = 0.05;

  TuneConfig tune;           // tune.noise.sigma applies when noise_aware
  bool profile_noise_factors = false;
  double task_gain = 0.25;   // readout gain of the surrogate probe

  std::uint64_t run_seed = 1;
};

/// One result row. wall_ms is informational and not part of the CSV.
struct RunReport {
  int buffer_size = 0;
  double sigma = 0.0;
  std::string profile;
  Method method = Method::kSsa;
  bool noise_aware = true;
  bool write_verify = false;
  std::uint64_t workload_seed = 0;
  std::uint64_t run_seed = 0;

  double retrieval_accuracy = 0.0;
  double surrogate_accuracy = 0.0;
  double mean_margin = 0.0;
  std::uint64_t macs = 0;
  std::uint64_t cell_reads = 0;
  std::uint64_t adc_conversions = 0;
  double wall_ms = 0.0;
};

/// Training mode (fill buffer, select, tune, encode, program, update the
/// autoencoder on leftovers) followed by inference mode (retrieve every
/// query and score). Throws StateError when the buffer never fills.
RunReport run_pipeline(const Workload& workload, const PipelineConfig& cfg);

/// Cross-product experiment definition.
struct RunConfig {
  std::vector<int> buffer_sizes{10, 20, 30, 40, 50, 60};
  std::vector<double> sigmas{0.025, 0.050, 0.075, 0.100, 0.125, 0.150};
  std::vector<Method> methods{Method::kSsa, Method::kMips};
  std::vector<bool> noise_aware_options{true, false};
  std::vector<bool> write_verify_options{false, true};
  std::vector<std::uint64_t> seeds{1};
  WorkloadSpec workload;
  PipelineConfig base;
};

/// One RunReport per cross-product cell, sorted by configuration key.
/// Workloads are regenerated per seed; samples_per_domain grows as needed
/// so the buffer can fill at every swept size.
std::vector<RunReport> sweep(const RunConfig& cfg);

/// Fixed CSV schema (documented in the README); byte-stable given the
/// same inputs.
std::string to_csv(const std::vector<RunReport>& rows);
void write_csv(const std::vector<RunReport>& rows,
               const std::filesystem::path& path);
std::vector<RunReport> read_csv(const std::filesystem::path& path);

/// Seed-averaged summary, one line per configuration.
std::string summarize(const std::vector<RunReport>& rows);

/// Parse a RunConfig from a JSON config file; missing keys keep defaults.
RunConfig run_config_from_json_file(const std::filesystem::path& path);

} // namespace nvpt
