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

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "nvpt/rng.hpp"
#include "nvpt/types.hpp"

namespace nvpt {

/// Per-level Gaussian conductance noise model for one NVM device type.
/// Levels are evenly spaced on normalized conductance [0,1]; sigma values
/// are in the same normalized units.
struct DeviceProfile {
  std::string name;
  int num_levels = 0;
  std::vector<double> sigma_per_level;

  /// Nominal normalized conductance of a level: level / (num_levels - 1).
  double level_value(int level) const;

  /// Throws std::invalid_argument if the profile is malformed
  /// (num_levels < 2, sigma count mismatch, negative sigma).
  void validate() const;
};

/// Relative value-perturbation knob used in device-variation sweeps,
/// independent of the per-level sigmas of a DeviceProfile.
struct VariationConfig {
  double global_sigma = 0.1;
  std::uint64_t seed = 0;
};

/// The five measured/synthesized device profiles, NVM-1 .. NVM-5.
const std::vector<DeviceProfile>& builtin_profiles();

/// Lookup by name ("nvm-1".."nvm-5", case-insensitive).
/// Throws std::invalid_argument for unknown names.
const DeviceProfile& builtin_profile(std::string_view name);

/// Parse {"name": str, "num_levels": int, "sigma_per_level": [floats]}.
DeviceProfile profile_from_json_text(const std::string& text);

/// Load a profile from a JSON file. Throws IoError if unreadable.
DeviceProfile load_profile(const std::filesystem::path& path);

/// One noisy analog read of a cell programmed to `level`:
/// level/(L-1) + N(0, sigma_per_level[level]). No clamping.
/// Throws std::domain_error if level is out of range.
double read_level(const DeviceProfile& profile, int level, Rng& rng);

/// v0 + N(0, (global_sigma * max|v0|)^2) i.i.d. per entry.
/// max|v0| = 0 (or global_sigma = 0) returns v0 unchanged.
Matrix perturb_values(const Matrix& v0, const VariationConfig& cfg, Rng& rng);

} // namespace nvpt
