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

#include "nvpt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "nvpt/errors.hpp"

namespace nvpt {

std::string method_name(Method m) {
  return m == Method::kSsa ? "ssa" : "mips";
}

Method method_from_name(const std::string& name) {
  if (name == "ssa") return Method::kSsa;
  if (name == "mips") return Method::kMips;
  throw std::invalid_argument("unknown method: " + name + " (want ssa|mips)");
}

namespace {

// Fixed substream tags for the per-run RNG tree.
constexpr std::uint64_t kSelectStream = 1;
constexpr std::uint64_t kAutoencStream = 2;
constexpr std::uint64_t kProgramStream = 3;
constexpr std::uint64_t kReadStream = 4;
constexpr std::uint64_t kTuneStreamBase = 100;

Matrix token_rows_of(const std::vector<BufferedSample>& samples, int dim) {
  Eigen::Index total = 0;
  for (const auto& s : samples) total += s.embedding.rows();
  Matrix rows(total, dim);
  Eigen::Index at = 0;
  for (const auto& s : samples) {
    rows.middleRows(at, s.embedding.rows()) = s.embedding;
    at += s.embedding.rows();
  }
  return rows;
}

Matrix dequantized(const EncodedPrompt& ep) {
  Matrix out(ep.data.rows(), ep.data.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      out(i, j) = static_cast<double>(ep.data(i, j)) * ep.scale;
  return out;
}

int predict_class(const Matrix& prompt, const Matrix& input_tokens,
                  const SurrogateTask& task) {
  SurrogateTask probe = task;
  probe.target = 0;
  const Vector logits = forward(prompt, input_tokens, probe).logits;
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

} // namespace

RunReport run_pipeline(const Workload& workload, const PipelineConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.buffer_size < 1) {
    throw std::invalid_argument("pipeline: buffer size must be >= 1");
  }
  cfg.profile.validate();
  Rng master(cfg.run_seed);

  // --- Training mode ---
  DataBuffer buffer(static_cast<std::size_t>(cfg.buffer_size), cfg.selection);
  for (const auto& s : workload.train) {
    if (buffer.full()) break;
    buffer.push(s);
  }
  if (!buffer.full()) {
    throw StateError("pipeline: buffer never filled (" +
                     std::to_string(buffer.size()) + "/" +
                     std::to_string(cfg.buffer_size) +
                     " samples in the stream)");
  }

  const Matrix pretrain_corpus = token_rows_of(buffer.samples(), workload.spec.dim);
  SelectResult selection = buffer.select_all(master.derive(kSelectStream).seed());

  LinearAutoencoder ae = LinearAutoencoder::train(
      pretrain_corpus, cfg.code_dim, cfg.ae_pretrain_epochs, cfg.ae_lr,
      master.derive(kAutoencStream).seed());
  if (!selection.leftovers.empty() && cfg.ae_update_epochs > 0) {
    ae.update(token_rows_of(selection.leftovers, workload.spec.dim),
              cfg.ae_update_epochs, cfg.ae_lr);
  }

  SurrogateTask task = SurrogateTask::from_centroids(workload.centroids,
                                                     cfg.task_gain);

  SearchConfig store_cfg = cfg.search;
  store_cfg.variation.global_sigma = cfg.sigma;
  store_cfg.variation.seed = cfg.run_seed;
  PromptStore store(cfg.profile, cfg.layout, store_cfg);

  Rng program_rng = master.derive(kProgramStream);
  for (std::size_t i = 0; i < selection.representatives.size(); ++i) {
    const BufferedSample& rep = selection.representatives[i];
    if (!rep.domain_tag) {
      throw StateError("pipeline: representative " + rep.id + " has no domain tag");
    }
    TuneConfig tune = cfg.tune;
    tune.noise.seed = master.derive(kTuneStreamBase + i).seed();
    if (!cfg.noise_aware) {
      tune.noise.sigma = 0.0;
    } else if (cfg.profile_noise_factors) {
      tune.noise = noise_from_profile(cfg.profile, tune.noise.sigma,
                                      tune.noise.seed);
    }
    task.target = *rep.domain_tag;
    const VirtualTokenSet prompt = tune_prompt(rep, task, tune);
    store.program(encode(prompt, ae), cfg.write_verify, program_rng);
  }

  // --- Inference mode ---
  if (workload.queries.empty()) {
    throw StateError("pipeline: workload has no queries");
  }
  std::vector<Matrix> query_mats;
  query_mats.reserve(workload.queries.size());
  for (const auto& q : workload.queries) {
    VirtualTokenSet as_tokens{q.embedding, q.id, q.domain_tag};
    query_mats.push_back(dequantized(encode(as_tokens, ae)));
  }

  SearchConfig retrieve_cfg = store_cfg;
  if (cfg.method == Method::kMips) {
    retrieve_cfg.scales = {1};
    retrieve_cfg.weights = {1.0};
  }
  Rng read_rng = master.derive(kReadStream);
  const ReadSnapshot snapshot = store.read_all(retrieve_cfg, read_rng);
  const std::vector<RetrievalResult> hits =
      store.retrieve_batch_on(snapshot, query_mats, retrieve_cfg);
  const Matrix scores = store.score_batch_on(snapshot, query_mats, retrieve_cfg);

  std::size_t retrieval_correct = 0;
  std::size_t surrogate_correct = 0;
  double margin_sum = 0.0;
  for (std::size_t q = 0; q < workload.queries.size(); ++q) {
    const auto& hit = hits[q];
    if (hit.domain_tag && workload.queries[q].domain_tag &&
        *hit.domain_tag == *workload.queries[q].domain_tag) {
      ++retrieval_correct;
    }

    // Margin between the best and second-best scores.
    if (store.entry_count() > 1) {
      double best = scores(static_cast<Eigen::Index>(q), 0);
      double second = -std::numeric_limits<double>::infinity();
      for (Eigen::Index e = 1; e < scores.cols(); ++e) {
        const double s = scores(static_cast<Eigen::Index>(q), e);
        if (s > best) {
          second = best;
          best = s;
        } else if (s > second) {
          second = s;
        }
      }
      margin_sum += best - second;
    }

    // Task accuracy with the retrieved prompt as read from the store.
    const Matrix& read_scale1 = snapshot[hit.entry_index][0];
    const Matrix decoded = ae.decode_rows(read_scale1);
    const int predicted = predict_class(decoded, workload.queries[q].embedding, task);
    if (workload.queries[q].domain_tag &&
        predicted == *workload.queries[q].domain_tag) {
      ++surrogate_correct;
    }
  }

  RunReport report;
  report.buffer_size = cfg.buffer_size;
  report.sigma = cfg.sigma;
  report.profile = cfg.profile.name;
  report.method = cfg.method;
  report.noise_aware = cfg.noise_aware;
  report.write_verify = cfg.write_verify.enabled;
  report.workload_seed = workload.spec.seed;
  report.run_seed = cfg.run_seed;
  const double n = static_cast<double>(workload.queries.size());
  report.retrieval_accuracy = static_cast<double>(retrieval_correct) / n;
  report.surrogate_accuracy = static_cast<double>(surrogate_correct) / n;
  report.mean_margin = margin_sum / n;
  const ReadCounters counters = store.counters();
  report.macs = counters.macs;
  report.cell_reads = counters.cell_reads;
  report.adc_conversions = counters.adc_conversions;
  report.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return report;
}

std::vector<RunReport> sweep(const RunConfig& cfg) {
  if (cfg.buffer_sizes.empty() || cfg.sigmas.empty() || cfg.methods.empty() ||
      cfg.noise_aware_options.empty() || cfg.write_verify_options.empty() ||
      cfg.seeds.empty()) {
    throw std::invalid_argument("sweep: every axis needs at least one value");
  }
  for (int b : cfg.buffer_sizes) {
    if (b < 1) throw std::invalid_argument("sweep: buffer sizes must be positive");
  }
  for (double s : cfg.sigmas) {
    if (!(s >= 0.0)) throw std::invalid_argument("sweep: sigmas must be >= 0");
  }

  std::vector<RunReport> rows;
  for (std::uint64_t seed : cfg.seeds) {
    for (int buffer_size : cfg.buffer_sizes) {
      WorkloadSpec spec = cfg.workload;
      spec.seed = seed;
      const int needed =
          (buffer_size + spec.num_domains - 1) / spec.num_domains;
      spec.samples_per_domain = std::max(spec.samples_per_domain, needed);
      const Workload workload = gen_workload(spec);

      for (double sigma : cfg.sigmas) {
        for (Method method : cfg.methods) {
          for (bool noise_aware : cfg.noise_aware_options) {
            for (bool write_verify : cfg.write_verify_options) {
              PipelineConfig run = cfg.base;
              run.buffer_size = buffer_size;
              run.sigma = sigma;
              run.method = method;
              run.noise_aware = noise_aware;
              run.write_verify.enabled = write_verify;
              run.run_seed = seed;
              rows.push_back(run_pipeline(workload, run));
            }
          }
        }
      }
    }
  }

  std::sort(rows.begin(), rows.end(), [](const RunReport& a, const RunReport& b) {
    return std::tie(a.buffer_size, a.sigma, a.method, a.noise_aware,
                    a.write_verify, a.workload_seed, a.run_seed) <
           std::tie(b.buffer_size, b.sigma, b.method, b.noise_aware,
                    b.write_verify, b.workload_seed, b.run_seed);
  });
  return rows;
}

namespace {

constexpr const char* kCsvHeader =
    "buffer_size,sigma,profile,method,noise_aware,write_verify,"
    "workload_seed,run_seed,retrieval_accuracy,surrogate_accuracy,"
    "mean_margin,macs,cell_reads,adc_conversions";

} // namespace

std::string to_csv(const std::vector<RunReport>& rows) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%.6g,%s,%s,%d,%d,%llu,%llu,%.6f,%.6f,%.9g,%llu,%llu,%llu\n",
                  r.buffer_size, r.sigma, r.profile.c_str(),
                  method_name(r.method).c_str(), r.noise_aware ? 1 : 0,
                  r.write_verify ? 1 : 0,
                  static_cast<unsigned long long>(r.workload_seed),
                  static_cast<unsigned long long>(r.run_seed),
                  r.retrieval_accuracy, r.surrogate_accuracy, r.mean_margin,
                  static_cast<unsigned long long>(r.macs),
                  static_cast<unsigned long long>(r.cell_reads),
                  static_cast<unsigned long long>(r.adc_conversions));
    out << buf;
  }
  return out.str();
}

void write_csv(const std::vector<RunReport>& rows,
               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write CSV: " + path.string());
  out << to_csv(rows);
  if (!out) throw IoError("short write to CSV: " + path.string());
}

std::vector<RunReport> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV: " + path.string());
  if (line != kCsvHeader) {
    throw std::invalid_argument("CSV header does not match the sweep schema");
  }
  std::vector<RunReport> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 14) {
      throw std::invalid_argument("CSV line " + std::to_string(lineno) +
                                  ": expected 14 fields");
    }
    try {
      RunReport r;
      r.buffer_size = std::stoi(fields[0]);
      r.sigma = std::stod(fields[1]);
      r.profile = fields[2];
      r.method = method_from_name(fields[3]);
      r.noise_aware = fields[4] == "1";
      r.write_verify = fields[5] == "1";
      r.workload_seed = std::stoull(fields[6]);
      r.run_seed = std::stoull(fields[7]);
      r.retrieval_accuracy = std::stod(fields[8]);
      r.surrogate_accuracy = std::stod(fields[9]);
      r.mean_margin = std::stod(fields[10]);
      r.macs = std::stoull(fields[11]);
      r.cell_reads = std::stoull(fields[12]);
      r.adc_conversions = std::stoull(fields[13]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("CSV line " + std::to_string(lineno) +
                                  ": malformed numeric field");
    }
  }
  return rows;
}

std::string summarize(const std::vector<RunReport>& rows) {
  struct Key {
    int buffer_size;
    double sigma;
    std::string profile;
    std::string method;
    bool noise_aware;
    bool write_verify;
    bool operator<(const Key& o) const {
      return std::tie(buffer_size, sigma, profile, method, noise_aware,
                      write_verify) <
             std::tie(o.buffer_size, o.sigma, o.profile, o.method,
                      o.noise_aware, o.write_verify);
    }
  };
  struct Acc {
    double retrieval = 0.0, surrogate = 0.0, margin = 0.0;
    int n = 0;
  };
  std::map<Key, Acc> groups;
  for (const auto& r : rows) {
    Acc& a = groups[Key{r.buffer_size, r.sigma, r.profile,
                        method_name(r.method), r.noise_aware, r.write_verify}];
    a.retrieval += r.retrieval_accuracy;
    a.surrogate += r.surrogate_accuracy;
    a.margin += r.mean_margin;
    ++a.n;
  }

  std::ostringstream out;
  out << "buffer  sigma   profile  method  na  wv  seeds  retrieval  surrogate  margin\n";
  char buf[256];
  for (const auto& [key, acc] : groups) {
    std::snprintf(buf, sizeof(buf),
                  "%-7d %-7.4g %-8s %-7s %-3d %-3d %-6d %-10.4f %-10.4f %-10.4g\n",
                  key.buffer_size, key.sigma, key.profile.c_str(),
                  key.method.c_str(), key.noise_aware ? 1 : 0,
                  key.write_verify ? 1 : 0, acc.n, acc.retrieval / acc.n,
                  acc.surrogate / acc.n, acc.margin / acc.n);
    out << buf;
  }
  return out.str();
}

RunConfig run_config_from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("config parse error: ") + e.what());
  }

  RunConfig cfg;
  try {
    if (j.contains("buffer_sizes")) cfg.buffer_sizes = j["buffer_sizes"].get<std::vector<int>>();
    if (j.contains("sigmas")) cfg.sigmas = j["sigmas"].get<std::vector<double>>();
    if (j.contains("methods")) {
      cfg.methods.clear();
      for (const auto& m : j["methods"]) {
        cfg.methods.push_back(method_from_name(m.get<std::string>()));
      }
    }
    if (j.contains("noise_aware")) cfg.noise_aware_options = j["noise_aware"].get<std::vector<bool>>();
    if (j.contains("write_verify")) cfg.write_verify_options = j["write_verify"].get<std::vector<bool>>();
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();

    if (j.contains("workload")) {
      const auto& w = j["workload"];
      cfg.workload.num_domains = w.value("num_domains", cfg.workload.num_domains);
      cfg.workload.samples_per_domain = w.value("samples_per_domain", cfg.workload.samples_per_domain);
      cfg.workload.queries_per_domain = w.value("queries_per_domain", cfg.workload.queries_per_domain);
      cfg.workload.dim = w.value("dim", cfg.workload.dim);
      cfg.workload.tokens = w.value("tokens", cfg.workload.tokens);
      cfg.workload.separation = w.value("separation", cfg.workload.separation);
    }

    if (j.contains("profile")) {
      const std::string name = j["profile"].get<std::string>();
      cfg.base.profile = std::filesystem::exists(name) ? load_profile(name)
                                                       : builtin_profile(name);
    }
    if (j.contains("scales")) cfg.base.search.scales = j["scales"].get<std::vector<int>>();
    if (j.contains("weights")) cfg.base.search.weights = j["weights"].get<std::vector<double>>();
    if (j.contains("read_noise")) cfg.base.search.read_noise = j["read_noise"].get<bool>();
    if (j.contains("cosine")) cfg.base.search.cosine = j["cosine"].get<bool>();
    if (j.contains("adc_bits")) cfg.base.search.adc_bits = j["adc_bits"].get<int>();

    if (j.contains("tune")) {
      const auto& t = j["tune"];
      cfg.base.tune.steps = t.value("steps", cfg.base.tune.steps);
      cfg.base.tune.lr = t.value("lr", cfg.base.tune.lr);
      cfg.base.tune.token_count = t.value("tokens", cfg.base.tune.token_count);
      cfg.base.tune.noise.sigma = t.value("noise_sigma", cfg.base.tune.noise.sigma);
    }
    if (j.contains("autoencoder")) {
      const auto& a = j["autoencoder"];
      cfg.base.code_dim = a.value("code_dim", cfg.base.code_dim);
      cfg.base.ae_pretrain_epochs = a.value("epochs", cfg.base.ae_pretrain_epochs);
      cfg.base.ae_update_epochs = a.value("update_epochs", cfg.base.ae_update_epochs);
      cfg.base.ae_lr = a.value("lr", cfg.base.ae_lr);
    }
    if (j.contains("write_verify_policy")) {
      const auto& p = j["write_verify_policy"];
      cfg.base.write_verify.tolerance = p.value("tolerance", cfg.base.write_verify.tolerance);
      cfg.base.write_verify.max_iters = p.value("max_iters", cfg.base.write_verify.max_iters);
    }
    cfg.base.task_gain = j.value("task_gain", cfg.base.task_gain);
    cfg.base.profile_noise_factors =
        j.value("profile_noise_factors", cfg.base.profile_noise_factors);
    cfg.base.selection.largest_cluster_only =
        j.value("largest_cluster_only", cfg.base.selection.largest_cluster_only);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config fields: ") + e.what());
  }
  return cfg;
}

} // namespace nvpt
