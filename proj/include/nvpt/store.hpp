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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvpt/codec.hpp"
#include "nvpt/device_models.hpp"
#include "nvpt/rng.hpp"
#include "nvpt/types.hpp"

namespace nvpt {

struct SearchConfig {
  std::vector<int> scales{1, 2, 4};
  std::vector<double> weights{1.0, 0.8, 0.6};
  bool read_noise = false;
  /// Score with cosine similarity per scale instead of dot products.
  bool cosine = false;
  /// Uniform converter resolution for cell readout; 0 means ideal.
  int adc_bits = 0;
  /// Write-time relative perturbation of stored values (the sweep knob),
  /// independent of the per-level device sigmas. Off unless configured.
  VariationConfig variation{0.0, 0};

  void validate() const;
};

struct WriteVerifyPolicy {
  bool enabled = false;
  double tolerance = 0.01; // normalized-conductance units
  int max_iters = 20;      // total programming attempts per cell

  void validate() const;
};

struct StoreGeometry {
  int rows = 384;
  int cols = 128;
  int max_subarrays = 0; // 0 = allocate on demand without limit
};

/// One crossbar subarray: digital levels plus the frozen analog deviation of
/// each cell (programming noise, and the folded-in value perturbation).
class CrossbarSubArray {
public:
  CrossbarSubArray(int rows, int cols)
      : levels_(U8Matrix::Zero(rows, cols)),
        analog_offset_(Matrix::Zero(rows, cols)) {}

  const U8Matrix& levels() const { return levels_; }
  const Matrix& analog_offsets() const { return analog_offset_; }
  int rows() const { return static_cast<int>(levels_.rows()); }
  int cols() const { return static_cast<int>(levels_.cols()); }
  int used_cols() const { return used_cols_; }

private:
  friend class PromptStore;
  U8Matrix levels_;
  Matrix analog_offset_;
  int used_cols_ = 0;
};

struct ScaleLocation {
  int scale = 1;
  int subarray = 0;
  int col_start = 0;
  int token_rows = 0; // ceil(T / scale)
};

struct StoredEntry {
  std::string id;
  std::optional<int> domain_tag;
  int token_count = 0; // scale-1 token rows
  double qscale = 1.0;
  std::vector<ScaleLocation> locations; // one per programmed scale
};

struct RetrievalResult {
  std::size_t entry_index = 0;
  std::string id;
  std::optional<int> domain_tag;
  double score = 0.0;
};

struct ReadCounters {
  std::uint64_t macs = 0;
  std::uint64_t cell_reads = 0;
  std::uint64_t adc_conversions = 0;
};

/// Non-overlapping average pooling over token rows; a final partial window
/// is averaged over its actual length. Columns untouched.
Matrix pool(const Matrix& x, int scale);

/// Integer-domain pooling used when programming: average, then round to the
/// nearest int16 (half away from zero).
Int16Matrix pool_quantized(const Int16Matrix& x, int scale);

/// Truncate or zero-pad query token rows to `token_count`.
Matrix align_tokens(const Matrix& e, int token_count);

/// Weighted multi-scale dot product of a query against per-scale stored
/// matrices: sum_i w_i <flat(Pool_i(e)), flat(p_i)> / sum_i w_i, after the
/// query is length-aligned to `stored_tokens`.
double wmsdp(const Matrix& e, std::span<const Matrix> stored_scaled,
             int stored_tokens, const SearchConfig& cfg);

/// Dequantized read values of every entry at the requested scales;
/// [entry][scale position in `scales`] -> pooled-tokens x d matrix.
using ReadSnapshot = std::vector<std::vector<Matrix>>;

/// Crossbar-backed prompt store. Entries are programmed once (write noise
/// frozen per cell) and retrieved by WMSDP or MIPS over reconstructed
/// shift-and-add readouts.
class PromptStore {
public:
  PromptStore(DeviceProfile profile, BitSliceLayout layout, SearchConfig config,
              StoreGeometry geometry = {});

  /// Pool to every configured scale in the integer domain, bit-slice, and
  /// program cells. Per-cell deviation is drawn from the profile's sigma for
  /// the programmed level; with write-verify enabled it is redrawn until
  /// within tolerance (best of max_iters attempts kept). The variation knob
  /// adds a frozen per-value perturbation of std sigma * max|values|.
  /// Throws CapacityError when the entry cannot be placed.
  StoredEntry program(const EncodedPrompt& ep, const WriteVerifyPolicy& policy,
                      Rng& rng);

  /// Read every cell behind the requested scales once, in a fixed order
  /// (entries ascending, scales in `cfg` order, tokens, values, slices).
  /// Read noise, when enabled, consumes one Gaussian per cell from `rng`.
  ReadSnapshot read_all(const SearchConfig& cfg, Rng& rng) const;

  /// Naive per-entry WMSDP argmax over a fresh read snapshot.
  /// Ties break to the lowest entry index. Throws StateError when empty.
  RetrievalResult retrieve(const Matrix& query, const SearchConfig& cfg,
                           Rng& rng) const;

  /// Plain inner product of flattened scale-1 representations.
  RetrievalResult retrieve_mips(const Matrix& query, const SearchConfig& cfg,
                                Rng& rng) const;

  /// All queries scored as one matrix product per scale against a single
  /// shared read snapshot; results are identical to looping retrieve()
  /// with the same RNG.
  std::vector<RetrievalResult> retrieve_batch(const std::vector<Matrix>& queries,
                                              const SearchConfig& cfg,
                                              Rng& rng) const;

  /// GEMM scores (queries x entries) against an existing snapshot taken
  /// with the same config.
  Matrix score_batch_on(const ReadSnapshot& snapshot,
                        const std::vector<Matrix>& queries,
                        const SearchConfig& cfg) const;

  /// Per-query argmax over score_batch_on; ties to the lowest entry index.
  std::vector<RetrievalResult> retrieve_batch_on(const ReadSnapshot& snapshot,
                                                 const std::vector<Matrix>& queries,
                                                 const SearchConfig& cfg) const;

  std::size_t entry_count() const { return entries_.size(); }
  const StoredEntry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<CrossbarSubArray>& subarrays() const { return subarrays_; }
  const SearchConfig& config() const { return config_; }
  const DeviceProfile& profile() const { return profile_; }
  const BitSliceLayout& layout() const { return layout_; }
  const StoreGeometry& geometry() const { return geometry_; }

  ReadCounters counters() const;
  void reset_counters();

  /// Persist to a directory: manifest.json, per-subarray level dumps
  /// (row-major little-endian u8) and analog offset dumps (f64).
  void save(const std::filesystem::path& dir) const;
  static PromptStore load(const std::filesystem::path& dir);

private:
  Matrix read_entry_scale(const StoredEntry& entry, const ScaleLocation& loc,
                          bool read_noise, int adc_bits, Rng& rng) const;
  void check_retrieval_config(const SearchConfig& cfg) const;
  std::vector<std::size_t> scale_positions(const SearchConfig& cfg) const;

  DeviceProfile profile_;
  BitSliceLayout layout_;
  SearchConfig config_;
  StoreGeometry geometry_;
  std::vector<CrossbarSubArray> subarrays_;
  std::vector<StoredEntry> entries_;

  struct Counters {
    std::atomic<std::uint64_t> macs{0};
    std::atomic<std::uint64_t> cell_reads{0};
    std::atomic<std::uint64_t> adc_conversions{0};
  };
  std::unique_ptr<Counters> counters_ = std::make_unique<Counters>();
};

} // namespace nvpt
