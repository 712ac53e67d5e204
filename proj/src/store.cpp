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

#include "nvpt/store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "nvpt/errors.hpp"

namespace nvpt {

void SearchConfig::validate() const {
  if (scales.empty() || scales.size() != weights.size()) {
    throw std::invalid_argument("search config: need matching non-empty scales and weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("search config: weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("search config: weight sum must be positive");
  }
  for (int s : scales) {
    if (s < 1) throw std::invalid_argument("search config: scales must be >= 1");
  }
  if (adc_bits < 0 || adc_bits > 16) {
    throw std::invalid_argument("search config: adc_bits must be in [0, 16]");
  }
  if (!(variation.global_sigma >= 0.0)) {
    throw std::invalid_argument("search config: variation sigma must be >= 0");
  }
}

void WriteVerifyPolicy::validate() const {
  if (!(tolerance > 0.0)) {
    throw std::invalid_argument("write-verify: tolerance must be > 0");
  }
  if (max_iters < 1) {
    throw std::invalid_argument("write-verify: max_iters must be >= 1");
  }
}

Matrix pool(const Matrix& x, int scale) {
  if (scale < 1) throw std::invalid_argument("pool: scale must be >= 1");
  if (scale == 1) return x;
  const Eigen::Index windows = (x.rows() + scale - 1) / scale;
  Matrix out(windows, x.cols());
  for (Eigen::Index w = 0; w < windows; ++w) {
    const Eigen::Index begin = w * scale;
    const Eigen::Index len = std::min<Eigen::Index>(scale, x.rows() - begin);
    out.row(w) = x.middleRows(begin, len).colwise().mean();
  }
  return out;
}

Int16Matrix pool_quantized(const Int16Matrix& x, int scale) {
  if (scale < 1) throw std::invalid_argument("pool: scale must be >= 1");
  if (scale == 1) return x;
  const Eigen::Index windows = (x.rows() + scale - 1) / scale;
  Int16Matrix out(windows, x.cols());
  for (Eigen::Index w = 0; w < windows; ++w) {
    const Eigen::Index begin = w * scale;
    const Eigen::Index len = std::min<Eigen::Index>(scale, x.rows() - begin);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double acc = 0.0;
      for (Eigen::Index r = 0; r < len; ++r) {
        acc += static_cast<double>(x(begin + r, j));
      }
      out(w, j) = static_cast<std::int16_t>(std::llround(acc / static_cast<double>(len)));
    }
  }
  return out;
}

Matrix align_tokens(const Matrix& e, int token_count) {
  if (token_count < 1) throw std::invalid_argument("align: token count must be >= 1");
  if (e.rows() == token_count) return e;
  Matrix out = Matrix::Zero(token_count, e.cols());
  const Eigen::Index copy = std::min<Eigen::Index>(e.rows(), token_count);
  out.topRows(copy) = e.topRows(copy);
  return out;
}

namespace {

double dot_flat_naive(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      acc += a(i, j) * b(i, j);
    }
  }
  return acc;
}

double norm_flat_naive(const Matrix& a) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      acc += a(i, j) * a(i, j);
    }
  }
  return std::sqrt(acc);
}

double score_pair(const Matrix& a, const Matrix& b, bool cosine) {
  if (!cosine) return dot_flat_naive(a, b);
  const double na = norm_flat_naive(a);
  const double nb = norm_flat_naive(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot_flat_naive(a, b) / (na * nb);
}

Vector flatten_row_major(const Matrix& m) {
  Vector v(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      v(k++) = m(i, j);
    }
  }
  return v;
}

} // namespace

double wmsdp(const Matrix& e, std::span<const Matrix> stored_scaled,
             int stored_tokens, const SearchConfig& cfg) {
  cfg.validate();
  if (stored_scaled.size() != cfg.scales.size()) {
    throw std::invalid_argument("wmsdp: one stored matrix per scale required");
  }
  const Matrix aligned = align_tokens(e, stored_tokens);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
    const Matrix pooled = pool(aligned, cfg.scales[i]);
    const Matrix& stored = stored_scaled[i];
    if (pooled.rows() != stored.rows() || pooled.cols() != stored.cols()) {
      throw std::invalid_argument("wmsdp: pooled query shape does not match stored shape");
    }
    num += cfg.weights[i] * score_pair(pooled, stored, cfg.cosine);
    den += cfg.weights[i];
  }
  return num / den;
}

PromptStore::PromptStore(DeviceProfile profile, BitSliceLayout layout,
                         SearchConfig config, StoreGeometry geometry)
    : profile_(std::move(profile)), layout_(layout), config_(std::move(config)),
      geometry_(geometry) {
  profile_.validate();
  layout_.validate();
  config_.validate();
  if (geometry_.rows < 1 || geometry_.cols < 1 || geometry_.max_subarrays < 0) {
    throw std::invalid_argument("store geometry: rows/cols must be positive");
  }
  if (layout_.levels_per_device() > profile_.num_levels) {
    throw std::invalid_argument("store: device has too few levels for " +
                                std::to_string(layout_.bits_per_device) +
                                "-bit slices");
  }
}

namespace {

// One cell programming with optional verify: keep the best of up to
// max_iters draws, stopping as soon as the deviation is within tolerance.
double program_cell(double sigma, const WriteVerifyPolicy& policy, Rng& rng) {
  if (sigma == 0.0) return 0.0;
  double best = rng.gaussian(0.0, sigma);
  if (!policy.enabled) return best;
  for (int attempt = 1;
       attempt < policy.max_iters && std::abs(best) > policy.tolerance;
       ++attempt) {
    const double d = rng.gaussian(0.0, sigma);
    if (std::abs(d) < std::abs(best)) best = d;
  }
  return best;
}

} // namespace

StoredEntry PromptStore::program(const EncodedPrompt& ep,
                                 const WriteVerifyPolicy& policy, Rng& rng) {
  policy.validate();
  if (!(ep.scale > 0.0)) {
    throw std::invalid_argument("program: encoded prompt scale must be positive");
  }
  const int tokens = static_cast<int>(ep.data.rows());
  const int dim = static_cast<int>(ep.data.cols());
  if (tokens < 1 || dim < 1) {
    throw std::invalid_argument("program: empty encoded prompt");
  }
  const int slices = layout_.num_slices();
  const int rows_needed = dim * slices;
  if (rows_needed > geometry_.rows) {
    throw CapacityError("program: entry needs " + std::to_string(rows_needed) +
                        " rows per token, subarray has " +
                        std::to_string(geometry_.rows));
  }
  int cols_needed = 0;
  for (int s : config_.scales) cols_needed += (tokens + s - 1) / s;
  if (cols_needed > geometry_.cols) {
    throw CapacityError("program: entry needs " + std::to_string(cols_needed) +
                        " columns, subarray has " + std::to_string(geometry_.cols));
  }

  // Greedy placement: extend the last subarray or allocate a new one.
  int target = -1;
  if (!subarrays_.empty() &&
      subarrays_.back().used_cols_ + cols_needed <= geometry_.cols) {
    target = static_cast<int>(subarrays_.size()) - 1;
  } else {
    if (geometry_.max_subarrays > 0 &&
        static_cast<int>(subarrays_.size()) >= geometry_.max_subarrays) {
      throw CapacityError("program: store is full (" +
                          std::to_string(subarrays_.size()) + " subarrays)");
    }
    subarrays_.emplace_back(geometry_.rows, geometry_.cols);
    target = static_cast<int>(subarrays_.size()) - 1;
  }
  CrossbarSubArray& sub = subarrays_[static_cast<std::size_t>(target)];

  StoredEntry entry;
  entry.id = ep.source_id;
  entry.domain_tag = ep.domain_tag;
  entry.token_count = tokens;
  entry.qscale = ep.scale;

  const int level_span = profile_.num_levels - 1;
  const int top_slice = slices - 1;
  const double top_weight = static_cast<double>(layout_.slice_weight(top_slice));

  for (int s : config_.scales) {
    const Int16Matrix pooled = pool_quantized(ep.data, s);
    ScaleLocation loc;
    loc.scale = s;
    loc.subarray = target;
    loc.col_start = sub.used_cols_;
    loc.token_rows = static_cast<int>(pooled.rows());

    for (Eigen::Index t = 0; t < pooled.rows(); ++t) {
      const int col = loc.col_start + static_cast<int>(t);
      for (Eigen::Index v = 0; v < pooled.cols(); ++v) {
        const auto digits = bit_slice(pooled(t, v), layout_);
        for (int sl = 0; sl < slices; ++sl) {
          const int row = static_cast<int>(v) * slices + sl;
          const int level = digits[static_cast<std::size_t>(sl)];
          sub.levels_(row, col) = static_cast<std::uint8_t>(level);
          sub.analog_offset_(row, col) = program_cell(
              profile_.sigma_per_level[static_cast<std::size_t>(level)], policy,
              rng);
        }
      }
    }

    // Sweep knob: frozen write-time perturbation of stored values, folded
    // into the top slice so the shift-and-add readout sees value + noise.
    if (config_.variation.global_sigma > 0.0 && pooled.size() > 0) {
      const double peak = static_cast<double>(
          pooled.cwiseAbs().maxCoeff());
      if (peak > 0.0) {
        const double sigma = config_.variation.global_sigma * peak;
        for (Eigen::Index t = 0; t < pooled.rows(); ++t) {
          const int col = loc.col_start + static_cast<int>(t);
          for (Eigen::Index v = 0; v < pooled.cols(); ++v) {
            const int row = static_cast<int>(v) * slices + top_slice;
            const double dv = rng.gaussian(0.0, sigma);
            sub.analog_offset_(row, col) +=
                dv / (static_cast<double>(level_span) * top_weight);
          }
        }
      }
    }

    sub.used_cols_ += loc.token_rows;
    entry.locations.push_back(loc);
  }

  entries_.push_back(entry);
  return entry;
}

Matrix PromptStore::read_entry_scale(const StoredEntry& entry,
                                     const ScaleLocation& loc, bool read_noise,
                                     int adc_bits, Rng& rng) const {
  const CrossbarSubArray& sub = subarrays_[static_cast<std::size_t>(loc.subarray)];
  const int slices = layout_.num_slices();
  const int dim = sub.rows() / slices;
  const double level_span = static_cast<double>(profile_.num_levels - 1);
  const double adc_step =
      adc_bits > 0 ? level_span / static_cast<double>((1 << adc_bits) - 1) : 0.0;

  Matrix out(loc.token_rows, dim);
  for (int t = 0; t < loc.token_rows; ++t) {
    const int col = loc.col_start + t;
    for (int v = 0; v < dim; ++v) {
      double value = 0.0;
      for (int sl = 0; sl < slices; ++sl) {
        const int row = v * slices + sl;
        const int level = sub.levels_(row, col);
        double analog = static_cast<double>(level) / level_span +
                        sub.analog_offset_(row, col);
        if (read_noise) {
          analog += rng.gaussian(
              0.0, profile_.sigma_per_level[static_cast<std::size_t>(level)]);
        }
        double digit = analog * level_span;
        if (adc_bits > 0) {
          digit = std::clamp(std::round(digit / adc_step) * adc_step, 0.0,
                             level_span);
        }
        value += digit * static_cast<double>(layout_.slice_weight(sl));
      }
      out(t, v) = (value - 32768.0) * entry.qscale;
    }
  }
  const auto cells = static_cast<std::uint64_t>(loc.token_rows) *
                     static_cast<std::uint64_t>(dim) *
                     static_cast<std::uint64_t>(slices);
  counters_->cell_reads.fetch_add(cells, std::memory_order_relaxed);
  counters_->adc_conversions.fetch_add(cells, std::memory_order_relaxed);
  return out;
}

std::vector<std::size_t> PromptStore::scale_positions(const SearchConfig& cfg) const {
  std::vector<std::size_t> positions;
  positions.reserve(cfg.scales.size());
  for (int s : cfg.scales) {
    bool found = false;
    for (std::size_t i = 0; i < config_.scales.size(); ++i) {
      if (config_.scales[i] == s) {
        positions.push_back(i);
        found = true;
        break;
      }
    }
    if (!found) {
      throw std::invalid_argument("retrieve: scale " + std::to_string(s) +
                                  " was not programmed into this store");
    }
  }
  return positions;
}

void PromptStore::check_retrieval_config(const SearchConfig& cfg) const {
  cfg.validate();
  if (entries_.empty()) throw StateError("retrieve: store is empty");
}

ReadSnapshot PromptStore::read_all(const SearchConfig& cfg, Rng& rng) const {
  check_retrieval_config(cfg);
  const auto positions = scale_positions(cfg);
  ReadSnapshot snapshot(entries_.size());
  for (std::size_t e = 0; e < entries_.size(); ++e) {
    snapshot[e].reserve(positions.size());
    for (std::size_t p : positions) {
      snapshot[e].push_back(read_entry_scale(entries_[e],
                                             entries_[e].locations[p],
                                             cfg.read_noise, cfg.adc_bits, rng));
    }
  }
  return snapshot;
}

RetrievalResult PromptStore::retrieve(const Matrix& query,
                                      const SearchConfig& cfg, Rng& rng) const {
  const ReadSnapshot snapshot = read_all(cfg, rng);
  RetrievalResult best;
  bool first = true;
  std::uint64_t macs = 0;
  for (std::size_t e = 0; e < entries_.size(); ++e) {
    const double score = wmsdp(query, snapshot[e], entries_[e].token_count, cfg);
    for (const Matrix& m : snapshot[e]) macs += static_cast<std::uint64_t>(m.size());
    if (first || score > best.score) {
      first = false;
      best.entry_index = e;
      best.id = entries_[e].id;
      best.domain_tag = entries_[e].domain_tag;
      best.score = score;
    }
  }
  counters_->macs.fetch_add(macs, std::memory_order_relaxed);
  return best;
}

RetrievalResult PromptStore::retrieve_mips(const Matrix& query,
                                           const SearchConfig& cfg,
                                           Rng& rng) const {
  check_retrieval_config(cfg);
  SearchConfig scale1 = cfg;
  scale1.scales = {1};
  scale1.weights = {1.0};
  const auto positions = scale_positions(scale1);

  RetrievalResult best;
  bool first = true;
  std::uint64_t macs = 0;
  for (std::size_t e = 0; e < entries_.size(); ++e) {
    const Matrix stored = read_entry_scale(entries_[e],
                                           entries_[e].locations[positions[0]],
                                           cfg.read_noise, cfg.adc_bits, rng);
    const Matrix aligned = align_tokens(query, entries_[e].token_count);
    const double score = dot_flat_naive(aligned, stored);
    macs += static_cast<std::uint64_t>(stored.size());
    if (first || score > best.score) {
      first = false;
      best.entry_index = e;
      best.id = entries_[e].id;
      best.domain_tag = entries_[e].domain_tag;
      best.score = score;
    }
  }
  counters_->macs.fetch_add(macs, std::memory_order_relaxed);
  return best;
}

std::vector<RetrievalResult> PromptStore::retrieve_batch(
    const std::vector<Matrix>& queries, const SearchConfig& cfg, Rng& rng) const {
  const ReadSnapshot snapshot = read_all(cfg, rng);
  return retrieve_batch_on(snapshot, queries, cfg);
}

Matrix PromptStore::score_batch_on(const ReadSnapshot& snapshot,
                                   const std::vector<Matrix>& queries,
                                   const SearchConfig& cfg) const {
  cfg.validate();
  if (entries_.empty()) throw StateError("retrieve: store is empty");
  if (snapshot.size() != entries_.size()) {
    throw std::invalid_argument("score_batch: snapshot entry count mismatch");
  }

  // Entries sharing a token count share flattened lengths per scale, so the
  // whole group is scored with one GEMM per scale.
  std::vector<std::vector<std::size_t>> groups;
  {
    std::vector<int> group_tokens;
    for (std::size_t e = 0; e < entries_.size(); ++e) {
      const int t = entries_[e].token_count;
      bool placed = false;
      for (std::size_t g = 0; g < group_tokens.size(); ++g) {
        if (group_tokens[g] == t) {
          groups[g].push_back(e);
          placed = true;
          break;
        }
      }
      if (!placed) {
        group_tokens.push_back(t);
        groups.push_back({e});
      }
    }
  }

  const double weight_sum =
      std::accumulate(cfg.weights.begin(), cfg.weights.end(), 0.0);
  Matrix scores = Matrix::Zero(static_cast<Eigen::Index>(queries.size()),
                               static_cast<Eigen::Index>(entries_.size()));
  std::uint64_t macs = 0;

  for (const auto& group : groups) {
    const int tokens = entries_[group.front()].token_count;
    for (std::size_t si = 0; si < cfg.scales.size(); ++si) {
      const int scale = cfg.scales[si];
      const Eigen::Index len = snapshot[group.front()][si].size();

      Matrix stored(static_cast<Eigen::Index>(group.size()), len);
      for (std::size_t gi = 0; gi < group.size(); ++gi) {
        stored.row(static_cast<Eigen::Index>(gi)) =
            flatten_row_major(snapshot[group[gi]][si]).transpose();
      }
      Matrix querymat(static_cast<Eigen::Index>(queries.size()), len);
      for (std::size_t q = 0; q < queries.size(); ++q) {
        querymat.row(static_cast<Eigen::Index>(q)) =
            flatten_row_major(pool(align_tokens(queries[q], tokens), scale))
                .transpose();
      }
      if (cfg.cosine) {
        for (Eigen::Index r = 0; r < stored.rows(); ++r) {
          const double n = stored.row(r).norm();
          if (n > 0.0) stored.row(r) /= n;
        }
        for (Eigen::Index r = 0; r < querymat.rows(); ++r) {
          const double n = querymat.row(r).norm();
          if (n > 0.0) querymat.row(r) /= n;
        }
      }

      const Matrix partial = querymat * stored.transpose(); // GEMM
      macs += static_cast<std::uint64_t>(querymat.rows()) *
              static_cast<std::uint64_t>(stored.rows()) *
              static_cast<std::uint64_t>(len);
      const double w = cfg.weights[si] / weight_sum;
      for (std::size_t gi = 0; gi < group.size(); ++gi) {
        scores.col(static_cast<Eigen::Index>(group[gi])) +=
            w * partial.col(static_cast<Eigen::Index>(gi));
      }
    }
  }
  counters_->macs.fetch_add(macs, std::memory_order_relaxed);
  return scores;
}

std::vector<RetrievalResult> PromptStore::retrieve_batch_on(
    const ReadSnapshot& snapshot, const std::vector<Matrix>& queries,
    const SearchConfig& cfg) const {
  if (queries.empty()) return {};
  const Matrix scores = score_batch_on(snapshot, queries, cfg);
  std::vector<RetrievalResult> results(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::size_t best = 0;
    for (std::size_t e = 1; e < entries_.size(); ++e) {
      if (scores(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(e)) >
          scores(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(best))) {
        best = e;
      }
    }
    results[q].entry_index = best;
    results[q].id = entries_[best].id;
    results[q].domain_tag = entries_[best].domain_tag;
    results[q].score =
        scores(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(best));
  }
  return results;
}

ReadCounters PromptStore::counters() const {
  return {counters_->macs.load(), counters_->cell_reads.load(),
          counters_->adc_conversions.load()};
}

void PromptStore::reset_counters() {
  counters_->macs = 0;
  counters_->cell_reads = 0;
  counters_->adc_conversions = 0;
}

namespace {

template <typename Scalar>
void write_matrix_binary(const std::filesystem::path& path,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const Scalar v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!out) throw IoError("short write to " + path.string());
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> read_matrix_binary(
    const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      Scalar v;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      if (!in) throw IoError("truncated dump: " + path.string());
      m(i, j) = v;
    }
  }
  return m;
}

std::string subarray_file(int index, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "subarray_%03d.%s.bin", index, kind);
  return buf;
}

} // namespace

void PromptStore::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create store directory: " + dir.string());

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["profile"] = {{"name", profile_.name},
                         {"num_levels", profile_.num_levels},
                         {"sigma_per_level", profile_.sigma_per_level}};
  manifest["layout"] = {{"bits_per_device", layout_.bits_per_device}};
  manifest["geometry"] = {{"rows", geometry_.rows},
                          {"cols", geometry_.cols},
                          {"max_subarrays", geometry_.max_subarrays}};
  manifest["search"] = {{"scales", config_.scales},
                        {"weights", config_.weights},
                        {"read_noise", config_.read_noise},
                        {"cosine", config_.cosine},
                        {"adc_bits", config_.adc_bits},
                        {"variation",
                         {{"global_sigma", config_.variation.global_sigma},
                          {"seed", config_.variation.seed}}}};

  auto subarrays = nlohmann::json::array();
  for (std::size_t i = 0; i < subarrays_.size(); ++i) {
    subarrays.push_back({{"levels", subarray_file(static_cast<int>(i), "levels")},
                         {"analog", subarray_file(static_cast<int>(i), "analog")},
                         {"used_cols", subarrays_[i].used_cols()}});
  }
  manifest["subarrays"] = std::move(subarrays);

  auto entries = nlohmann::json::array();
  for (const auto& e : entries_) {
    nlohmann::json je;
    je["id"] = e.id;
    if (e.domain_tag) je["domain"] = *e.domain_tag;
    je["tokens"] = e.token_count;
    je["scale"] = e.qscale;
    auto locs = nlohmann::json::array();
    for (const auto& l : e.locations) {
      locs.push_back({{"scale", l.scale},
                      {"subarray", l.subarray},
                      {"col_start", l.col_start},
                      {"token_rows", l.token_rows}});
    }
    je["locations"] = std::move(locs);
    entries.push_back(std::move(je));
  }
  manifest["entries"] = std::move(entries);

  std::ofstream mout(dir / "manifest.json");
  if (!mout) throw IoError("cannot write store manifest");
  mout << manifest.dump(2) << "\n";

  for (std::size_t i = 0; i < subarrays_.size(); ++i) {
    write_matrix_binary(dir / subarray_file(static_cast<int>(i), "levels"),
                        subarrays_[i].levels());
    write_matrix_binary(dir / subarray_file(static_cast<int>(i), "analog"),
                        subarrays_[i].analog_offsets());
  }
}

PromptStore PromptStore::load(const std::filesystem::path& dir) {
  std::ifstream min(dir / "manifest.json");
  if (!min) throw IoError("cannot open store manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("store manifest parse error: ") + e.what());
  }

  try {
    DeviceProfile profile;
    profile.name = manifest.at("profile").at("name").get<std::string>();
    profile.num_levels = manifest.at("profile").at("num_levels").get<int>();
    profile.sigma_per_level =
        manifest.at("profile").at("sigma_per_level").get<std::vector<double>>();

    BitSliceLayout layout;
    layout.bits_per_device = manifest.at("layout").at("bits_per_device").get<int>();

    SearchConfig cfg;
    cfg.scales = manifest.at("search").at("scales").get<std::vector<int>>();
    cfg.weights = manifest.at("search").at("weights").get<std::vector<double>>();
    cfg.read_noise = manifest.at("search").at("read_noise").get<bool>();
    cfg.cosine = manifest.at("search").at("cosine").get<bool>();
    cfg.adc_bits = manifest.at("search").at("adc_bits").get<int>();
    cfg.variation.global_sigma =
        manifest.at("search").at("variation").at("global_sigma").get<double>();
    cfg.variation.seed =
        manifest.at("search").at("variation").at("seed").get<std::uint64_t>();

    StoreGeometry geometry;
    geometry.rows = manifest.at("geometry").at("rows").get<int>();
    geometry.cols = manifest.at("geometry").at("cols").get<int>();
    geometry.max_subarrays = manifest.at("geometry").at("max_subarrays").get<int>();

    PromptStore store(std::move(profile), layout, std::move(cfg), geometry);

    for (const auto& js : manifest.at("subarrays")) {
      CrossbarSubArray sub(geometry.rows, geometry.cols);
      sub.levels_ = read_matrix_binary<std::uint8_t>(
          dir / js.at("levels").get<std::string>(), geometry.rows, geometry.cols);
      sub.analog_offset_ = read_matrix_binary<double>(
          dir / js.at("analog").get<std::string>(), geometry.rows, geometry.cols);
      sub.used_cols_ = js.at("used_cols").get<int>();
      store.subarrays_.push_back(std::move(sub));
    }

    for (const auto& je : manifest.at("entries")) {
      StoredEntry e;
      e.id = je.at("id").get<std::string>();
      if (je.contains("domain")) e.domain_tag = je["domain"].get<int>();
      e.token_count = je.at("tokens").get<int>();
      e.qscale = je.at("scale").get<double>();
      for (const auto& jl : je.at("locations")) {
        ScaleLocation l;
        l.scale = jl.at("scale").get<int>();
        l.subarray = jl.at("subarray").get<int>();
        l.col_start = jl.at("col_start").get<int>();
        l.token_rows = jl.at("token_rows").get<int>();
        if (l.subarray < 0 ||
            l.subarray >= static_cast<int>(store.subarrays_.size())) {
          throw std::invalid_argument("store manifest: bad subarray index");
        }
        e.locations.push_back(l);
      }
      if (e.locations.size() != store.config_.scales.size()) {
        throw std::invalid_argument("store manifest: entry scale count mismatch");
      }
      store.entries_.push_back(std::move(e));
    }
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("store manifest fields: ") + e.what());
  }
}

} // namespace nvpt
