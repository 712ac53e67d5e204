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

#include "nvpt/device_models.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nvpt/errors.hpp"

namespace nvpt {

double DeviceProfile::level_value(int level) const {
  if (level < 0 || level >= num_levels) {
    throw std::domain_error("level " + std::to_string(level) +
                            " out of range for profile " + name);
  }
  return static_cast<double>(level) / static_cast<double>(num_levels - 1);
}

void DeviceProfile::validate() const {
  if (num_levels < 2) {
    throw std::invalid_argument("profile " + name +
                                ": num_levels must be >= 2");
  }
  if (sigma_per_level.size() != static_cast<std::size_t>(num_levels)) {
    throw std::invalid_argument("profile " + name +
                                ": sigma_per_level must have num_levels entries");
  }
  for (double s : sigma_per_level) {
    if (!(s >= 0.0)) {
      throw std::invalid_argument("profile " + name +
                                  ": sigma values must be non-negative");
    }
  }
}

const std::vector<DeviceProfile>& builtin_profiles() {
  static const std::vector<DeviceProfile> profiles = {
      {"NVM-1", 4, {0.0100, 0.0100, 0.0100, 0.0100}},
      {"NVM-2", 4, {0.0067, 0.0135, 0.0135, 0.0067}},
      {"NVM-3", 4, {0.0049, 0.0146, 0.0146, 0.0049}},
      {"NVM-4", 4, {0.0038, 0.0151, 0.0151, 0.0038}},
      {"NVM-5", 4, {0.0026, 0.0155, 0.0155, 0.0026}},
  };
  return profiles;
}

const DeviceProfile& builtin_profile(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (const auto& p : builtin_profiles()) {
    std::string pn = p.name;
    std::transform(pn.begin(), pn.end(), pn.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (pn == lower) return p;
  }
  throw std::invalid_argument("unknown device profile: " + std::string(name));
}

DeviceProfile profile_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("profile JSON parse error: ") + e.what());
  }
  DeviceProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.num_levels = j.at("num_levels").get<int>();
    p.sigma_per_level = j.at("sigma_per_level").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("profile JSON fields: ") + e.what());
  }
  p.validate();
  return p;
}

DeviceProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open profile file: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return profile_from_json_text(buf.str());
}

double read_level(const DeviceProfile& profile, int level, Rng& rng) {
  const double nominal = profile.level_value(level); // range-checks level
  const double sigma = profile.sigma_per_level[static_cast<std::size_t>(level)];
  if (sigma == 0.0) return nominal;
  return nominal + rng.gaussian(0.0, sigma);
}

Matrix perturb_values(const Matrix& v0, const VariationConfig& cfg, Rng& rng) {
  const double peak = v0.size() == 0 ? 0.0 : v0.cwiseAbs().maxCoeff();
  if (cfg.global_sigma == 0.0 || peak == 0.0) return v0;
  const double sigma = cfg.global_sigma * peak;
  Matrix out = v0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) += rng.gaussian(0.0, sigma);
    }
  }
  return out;
}

} // namespace nvpt
