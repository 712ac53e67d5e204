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
#include <span>
#include <string>
#include <vector>

#include "nvpt/types.hpp"

namespace nvpt {

/// A set of trained soft-prompt tokens: T x D reals.
struct VirtualTokenSet {
  Matrix tokens;
  std::string id;
  std::optional<int> domain_tag;
};

/// Single linear encoder/decoder pair trained on reconstruction MSE by
/// full-batch gradient descent. Acts per token row: D -> d_enc -> D.
class LinearAutoencoder {
public:
  LinearAutoencoder(Matrix enc, Matrix dec);

  /// Train from scratch on `corpus` (rows are D-vectors). Deterministic per
  /// seed. Throws std::invalid_argument on empty corpus or d_enc >= D.
  static LinearAutoencoder train(const Matrix& corpus, int code_dim,
                                 int epochs, double lr, std::uint64_t seed);

  /// Continue training from the current weights; returns per-epoch MSE
  /// (measured after each step). Throws std::invalid_argument on empty input.
  std::vector<double> update(const Matrix& corpus, int epochs, double lr);

  /// Rows projected into code space: (n x D) -> (n x d_enc).
  Matrix encode_rows(const Matrix& x) const;
  /// Rows projected back: (n x d_enc) -> (n x D).
  Matrix decode_rows(const Matrix& z) const;

  /// Mean squared reconstruction error per element over `corpus`.
  double mse(const Matrix& corpus) const;

  int input_dim() const { return static_cast<int>(enc_.rows()); }
  int code_dim() const { return static_cast<int>(enc_.cols()); }
  const Matrix& encoder() const { return enc_; }
  const Matrix& decoder() const { return dec_; }

private:
  Matrix enc_; // D x d_enc
  Matrix dec_; // d_enc x D
};

/// int16, dimension-reduced form of a VirtualTokenSet as stored on crossbars.
/// Symmetric per-tensor quantization: scale = max|projected| / 32767
/// (scale = 1 when the projection is all-zero); values clamped to +/-32767,
/// so -32768 never occurs.
struct EncodedPrompt {
  Int16Matrix data; // T x d_enc
  double scale = 1.0;
  std::string source_id;
  std::optional<int> domain_tag;
};

EncodedPrompt encode(const VirtualTokenSet& vts, const LinearAutoencoder& ae);
VirtualTokenSet decode(const EncodedPrompt& ep, const LinearAutoencoder& ae);

/// How one int16 value is split across b-bit device cells.
/// Signed values are offset to unsigned (u = v + 32768) and written as
/// base-2^b digits, least-significant slice first.
struct BitSliceLayout {
  int bits_per_device = 2; // 1, 2, or 4

  int num_slices() const { return 16 / bits_per_device; }
  int levels_per_device() const { return 1 << bits_per_device; }
  /// Shift-and-add weight of slice i: 2^(b*i).
  std::int64_t slice_weight(int slice) const {
    return std::int64_t{1} << (bits_per_device * slice);
  }
  void validate() const;
};

/// Digits of value+32768 in base 2^b, LSB first. |value| must be <= 32767.
std::vector<int> bit_slice(std::int16_t value, const BitSliceLayout& layout);

/// Inverse of bit_slice: sum(levels[i] * 2^(b*i)) - 32768.
/// Throws std::invalid_argument on level overflow or slice-count mismatch.
std::int16_t unslice(std::span<const int> levels, const BitSliceLayout& layout);

// Serialization.
//
// Autoencoder container: magic "NVPT", u32 version, u32 D, u32 d_enc,
// then row-major little-endian f32 for the encoder and the decoder.
void save_autoencoder(const LinearAutoencoder& ae,
                      const std::filesystem::path& path);
LinearAutoencoder load_autoencoder(const std::filesystem::path& path);

// EncodedPrompt: JSON metadata at `meta_path`, int16 payload (row-major
// little-endian) in a sibling file named in the metadata.
void save_encoded_prompt(const EncodedPrompt& ep,
                         const std::filesystem::path& meta_path);
EncodedPrompt load_encoded_prompt(const std::filesystem::path& meta_path);

} // namespace nvpt
