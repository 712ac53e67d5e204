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

#include "nvpt/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "nvpt/errors.hpp"
#include "nvpt/rng.hpp"

namespace nvpt {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'N', 'V', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_f32_row_major(std::ofstream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float v = static_cast<float>(m(i, j));
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

Matrix read_f32_row_major(std::ifstream& in, Eigen::Index rows,
                          Eigen::Index cols, const std::string& what) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      float v;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      if (!in) throw IoError("truncated autoencoder container (" + what + ")");
      m(i, j) = v;
    }
  }
  return m;
}

} // namespace

LinearAutoencoder::LinearAutoencoder(Matrix enc, Matrix dec)
    : enc_(std::move(enc)), dec_(std::move(dec)) {
  if (enc_.cols() != dec_.rows()) {
    throw std::invalid_argument("autoencoder: enc cols must equal dec rows");
  }
  if (enc_.rows() != dec_.cols()) {
    throw std::invalid_argument("autoencoder: enc rows must equal dec cols");
  }
}

LinearAutoencoder LinearAutoencoder::train(const Matrix& corpus, int code_dim,
                                           int epochs, double lr,
                                           std::uint64_t seed) {
  if (corpus.rows() == 0) {
    throw std::invalid_argument("autoencoder train: empty corpus");
  }
  const int dim = static_cast<int>(corpus.cols());
  if (code_dim < 1 || code_dim >= dim) {
    throw std::invalid_argument("autoencoder train: need 1 <= d_enc < D");
  }
  Rng rng(seed);
  Matrix enc(dim, code_dim), dec(code_dim, dim);
  const double enc_std = 1.0 / std::sqrt(static_cast<double>(dim));
  const double dec_std = 1.0 / std::sqrt(static_cast<double>(code_dim));
  for (Eigen::Index i = 0; i < enc.rows(); ++i)
    for (Eigen::Index j = 0; j < enc.cols(); ++j)
      enc(i, j) = rng.gaussian(0.0, enc_std);
  for (Eigen::Index i = 0; i < dec.rows(); ++i)
    for (Eigen::Index j = 0; j < dec.cols(); ++j)
      dec(i, j) = rng.gaussian(0.0, dec_std);

  LinearAutoencoder ae(std::move(enc), std::move(dec));
  ae.update(corpus, epochs, lr);
  return ae;
}

std::vector<double> LinearAutoencoder::update(const Matrix& corpus, int epochs,
                                              double lr) {
  if (corpus.rows() == 0) {
    throw std::invalid_argument("autoencoder update: empty corpus");
  }
  if (corpus.cols() != enc_.rows()) {
    throw std::invalid_argument("autoencoder update: corpus dim mismatch");
  }
  const double n = static_cast<double>(corpus.rows());
  const double d = static_cast<double>(corpus.cols());
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(std::max(epochs, 0)));
  for (int e = 0; e < epochs; ++e) {
    const Matrix code = corpus * enc_;          // n x d_enc
    const Matrix residual = code * dec_ - corpus; // n x D
    const double norm = 2.0 / (n * d);
    const Matrix grad_dec = norm * (code.transpose() * residual);
    const Matrix grad_enc = norm * (corpus.transpose() * (residual * dec_.transpose()));
    enc_ -= lr * grad_enc;
    dec_ -= lr * grad_dec;
    losses.push_back(mse(corpus));
  }
  return losses;
}

Matrix LinearAutoencoder::encode_rows(const Matrix& x) const {
  if (x.cols() != enc_.rows()) {
    throw std::invalid_argument("autoencoder encode: input dim mismatch");
  }
  return x * enc_;
}

Matrix LinearAutoencoder::decode_rows(const Matrix& z) const {
  if (z.cols() != dec_.rows()) {
    throw std::invalid_argument("autoencoder decode: code dim mismatch");
  }
  return z * dec_;
}

double LinearAutoencoder::mse(const Matrix& corpus) const {
  const Matrix residual = decode_rows(encode_rows(corpus)) - corpus;
  return residual.squaredNorm() /
         static_cast<double>(corpus.rows() * corpus.cols());
}

EncodedPrompt encode(const VirtualTokenSet& vts, const LinearAutoencoder& ae) {
  const Matrix projected = ae.encode_rows(vts.tokens);
  const double peak =
      projected.size() == 0 ? 0.0 : projected.cwiseAbs().maxCoeff();
  EncodedPrompt ep;
  ep.scale = peak == 0.0 ? 1.0 : peak / 32767.0;
  ep.source_id = vts.id;
  ep.domain_tag = vts.domain_tag;
  ep.data.resize(projected.rows(), projected.cols());
  for (Eigen::Index i = 0; i < projected.rows(); ++i) {
    for (Eigen::Index j = 0; j < projected.cols(); ++j) {
      long long q = std::llround(projected(i, j) / ep.scale);
      q = std::clamp(q, -32767ll, 32767ll);
      ep.data(i, j) = static_cast<std::int16_t>(q);
    }
  }
  return ep;
}

VirtualTokenSet decode(const EncodedPrompt& ep, const LinearAutoencoder& ae) {
  Matrix dequant(ep.data.rows(), ep.data.cols());
  for (Eigen::Index i = 0; i < dequant.rows(); ++i)
    for (Eigen::Index j = 0; j < dequant.cols(); ++j)
      dequant(i, j) = static_cast<double>(ep.data(i, j)) * ep.scale;
  VirtualTokenSet vts;
  vts.tokens = ae.decode_rows(dequant);
  vts.id = ep.source_id;
  vts.domain_tag = ep.domain_tag;
  return vts;
}

void BitSliceLayout::validate() const {
  if (bits_per_device != 1 && bits_per_device != 2 && bits_per_device != 4) {
    throw std::invalid_argument("bit-slice layout: bits_per_device must be 1, 2 or 4");
  }
}

std::vector<int> bit_slice(std::int16_t value, const BitSliceLayout& layout) {
  layout.validate();
  if (value == std::numeric_limits<std::int16_t>::min()) {
    throw std::invalid_argument("bit_slice: -32768 is outside the clamped range");
  }
  std::uint32_t u = static_cast<std::uint32_t>(static_cast<int>(value) + 32768);
  const int base = layout.levels_per_device();
  std::vector<int> digits(static_cast<std::size_t>(layout.num_slices()));
  for (auto& d : digits) {
    d = static_cast<int>(u % static_cast<std::uint32_t>(base));
    u /= static_cast<std::uint32_t>(base);
  }
  return digits;
}

std::int16_t unslice(std::span<const int> levels, const BitSliceLayout& layout) {
  layout.validate();
  if (levels.size() != static_cast<std::size_t>(layout.num_slices())) {
    throw std::invalid_argument("unslice: wrong number of slices");
  }
  std::int64_t u = 0;
  for (int i = 0; i < layout.num_slices(); ++i) {
    const int lv = levels[static_cast<std::size_t>(i)];
    if (lv < 0 || lv >= layout.levels_per_device()) {
      throw std::invalid_argument("unslice: level out of range for layout");
    }
    u += static_cast<std::int64_t>(lv) * layout.slice_weight(i);
  }
  return static_cast<std::int16_t>(u - 32768);
}

void save_autoencoder(const LinearAutoencoder& ae,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write autoencoder file: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kVersion;
  const std::uint32_t dim = static_cast<std::uint32_t>(ae.input_dim());
  const std::uint32_t code = static_cast<std::uint32_t>(ae.code_dim());
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(&code), sizeof(code));
  write_f32_row_major(out, ae.encoder());
  write_f32_row_major(out, ae.decoder());
  if (!out) throw IoError("short write to autoencoder file: " + path.string());
}

LinearAutoencoder load_autoencoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open autoencoder file: " + path.string());
  char magic[4];
  std::uint32_t version, dim, code;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  in.read(reinterpret_cast<char*>(&code), sizeof(code));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not an autoencoder container: " + path.string());
  }
  if (version != kVersion) {
    throw IoError("unsupported autoencoder container version");
  }
  Matrix enc = read_f32_row_major(in, dim, code, "encoder");
  Matrix dec = read_f32_row_major(in, code, dim, "decoder");
  return LinearAutoencoder(std::move(enc), std::move(dec));
}

void save_encoded_prompt(const EncodedPrompt& ep,
                         const std::filesystem::path& meta_path) {
  std::filesystem::path payload_path = meta_path;
  payload_path.replace_extension(".i16");

  nlohmann::json meta;
  meta["id"] = ep.source_id;
  meta["tokens"] = ep.data.rows();
  meta["dim"] = ep.data.cols();
  meta["scale"] = ep.scale;
  if (ep.domain_tag) meta["domain"] = *ep.domain_tag;
  meta["payload"] = payload_path.filename().string();

  std::ofstream mout(meta_path);
  if (!mout) throw IoError("cannot write prompt metadata: " + meta_path.string());
  mout << meta.dump(2) << "\n";

  std::ofstream pout(payload_path, std::ios::binary);
  if (!pout) throw IoError("cannot write prompt payload: " + payload_path.string());
  for (Eigen::Index i = 0; i < ep.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < ep.data.cols(); ++j) {
      const std::int16_t v = ep.data(i, j);
      pout.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!pout) throw IoError("short write to prompt payload");
}

EncodedPrompt load_encoded_prompt(const std::filesystem::path& meta_path) {
  std::ifstream min(meta_path);
  if (!min) throw IoError("cannot open prompt metadata: " + meta_path.string());
  nlohmann::json meta;
  try {
    min >> meta;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("prompt metadata parse error: ") + e.what());
  }
  EncodedPrompt ep;
  Eigen::Index rows, cols;
  std::string payload_name;
  try {
    ep.source_id = meta.at("id").get<std::string>();
    rows = meta.at("tokens").get<Eigen::Index>();
    cols = meta.at("dim").get<Eigen::Index>();
    ep.scale = meta.at("scale").get<double>();
    if (meta.contains("domain")) ep.domain_tag = meta["domain"].get<int>();
    payload_name = meta.at("payload").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("prompt metadata fields: ") + e.what());
  }
  if (!(ep.scale > 0.0)) {
    throw std::invalid_argument("prompt metadata: scale must be positive");
  }

  const std::filesystem::path payload_path = meta_path.parent_path() / payload_name;
  std::ifstream pin(payload_path, std::ios::binary);
  if (!pin) throw IoError("cannot open prompt payload: " + payload_path.string());
  ep.data.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::int16_t v;
      pin.read(reinterpret_cast<char*>(&v), sizeof(v));
      if (!pin) throw IoError("truncated prompt payload: " + payload_path.string());
      ep.data(i, j) = v;
    }
  }
  return ep;
}

} // namespace nvpt
