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

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "nvpt/errors.hpp"
#include "nvpt/harness.hpp"

namespace fs = std::filesystem;
using namespace nvpt;

namespace {

// Exit codes: 0 ok, 2 argument error, 3 state error, 4 I/O error.
constexpr int kOk = 0;
constexpr int kArgumentError = 2;
constexpr int kStateError = 3;
constexpr int kIoError = 4;

struct GlobalOptions {
  std::uint64_t seed = 1;
  std::string profile = "nvm-3";
  double sigma = 0.1;
  std::vector<int> scales{1, 2, 4};
  std::vector<double> weights{1.0, 0.8, 0.6};
  bool write_verify = false;
  std::string method = "ssa";
  std::string noise_aware = "on";
  std::string out_dir;
};

DeviceProfile resolve_profile(const std::string& name) {
  if (fs::exists(name)) return load_profile(name);
  return builtin_profile(name);
}

bool parse_on_off(const std::string& v, const char* flag) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw std::invalid_argument(std::string(flag) + " must be 'on' or 'off'");
}

SearchConfig make_search(const GlobalOptions& g) {
  SearchConfig cfg;
  cfg.scales = g.scales;
  cfg.weights = g.weights;
  cfg.validate();
  return cfg;
}

void require_out(const GlobalOptions& g) {
  if (g.out_dir.empty()) {
    throw std::invalid_argument("--out DIR is required for this subcommand");
  }
}

// ---- gen ----------------------------------------------------------------

struct GenOptions {
  int domains = 5;
  int samples_per_domain = 12;
  int queries_per_domain = 10;
  int dim = 64;
  int tokens = 10;
  double separation = 4.0;
};

int run_gen(const GlobalOptions& g, const GenOptions& o) {
  require_out(g);
  WorkloadSpec spec;
  spec.num_domains = o.domains;
  spec.samples_per_domain = o.samples_per_domain;
  spec.queries_per_domain = o.queries_per_domain;
  spec.dim = o.dim;
  spec.tokens = o.tokens;
  spec.separation = o.separation;
  spec.seed = g.seed;
  const Workload w = gen_workload(spec);
  write_workload(w, g.out_dir);
  std::cout << "wrote " << w.train.size() << " train samples and "
            << w.queries.size() << " queries to " << g.out_dir << "\n";
  return kOk;
}

// ---- tune ---------------------------------------------------------------

struct TuneOptions {
  std::string workload_dir;
  int buffer_size = 20;
  int steps = 300;
  double lr = 0.5;
  double sigma_train = 0.1;
  int ae_epochs = 120;
  int ae_update_epochs = 40;
  double ae_lr = 0.05;
  int code_dim = 48;
  double task_gain = 0.25;
  bool largest_cluster_only = false;
};

int run_tune(const GlobalOptions& g, const TuneOptions& o) {
  require_out(g);
  const fs::path wdir = o.workload_dir;
  const WorkloadSpec spec = workload_spec_from_json_file(wdir / "workload.json");
  const Workload workload = gen_workload(spec); // re-derives the centroids
  const auto samples = read_samples_jsonl(wdir / "train.jsonl");

  SelectionParams params;
  params.largest_cluster_only = o.largest_cluster_only;
  DataBuffer buffer(static_cast<std::size_t>(o.buffer_size), params);
  for (const auto& s : samples) {
    if (buffer.full()) break;
    buffer.push(s);
  }
  if (!buffer.full()) {
    throw StateError("buffer never filled: stream has " +
                     std::to_string(samples.size()) + " samples, need " +
                     std::to_string(o.buffer_size));
  }

  Rng master(g.seed);
  Matrix corpus(static_cast<Eigen::Index>(buffer.size()) * spec.tokens, spec.dim);
  Eigen::Index at = 0;
  for (const auto& s : buffer.samples()) {
    corpus.middleRows(at, s.embedding.rows()) = s.embedding;
    at += s.embedding.rows();
  }
  SelectResult selection = buffer.select_all(master.derive(1).seed());

  LinearAutoencoder ae = LinearAutoencoder::train(
      corpus, o.code_dim, o.ae_epochs, o.ae_lr, master.derive(2).seed());
  if (!selection.leftovers.empty() && o.ae_update_epochs > 0) {
    Eigen::Index rows = 0;
    for (const auto& s : selection.leftovers) rows += s.embedding.rows();
    Matrix leftover(rows, spec.dim);
    at = 0;
    for (const auto& s : selection.leftovers) {
      leftover.middleRows(at, s.embedding.rows()) = s.embedding;
      at += s.embedding.rows();
    }
    ae.update(leftover, o.ae_update_epochs, o.ae_lr);
  }

  const fs::path out = g.out_dir;
  fs::create_directories(out);
  save_autoencoder(ae, out / "autoencoder.bin");
  write_selection_report(selection, out / "selection.json");

  SurrogateTask task = SurrogateTask::from_centroids(workload.centroids, o.task_gain);
  const bool noise_on = parse_on_off(g.noise_aware, "--noise-aware");
  for (std::size_t i = 0; i < selection.representatives.size(); ++i) {
    const auto& rep = selection.representatives[i];
    if (!rep.domain_tag) {
      throw StateError("representative " + rep.id + " carries no domain tag");
    }
    TuneConfig tune;
    tune.steps = o.steps;
    tune.lr = o.lr;
    tune.token_count = spec.tokens;
    tune.noise.sigma = noise_on ? o.sigma_train : 0.0;
    tune.noise.seed = master.derive(100 + i).seed();
    task.target = *rep.domain_tag;

    TuneTrace trace;
    const VirtualTokenSet prompt = tune_prompt(rep, task, tune, &trace);
    const EncodedPrompt ep = encode(prompt, ae);
    const std::string stem = "prompt_" + std::to_string(i);
    save_encoded_prompt(ep, out / (stem + ".json"));
    write_tune_log(trace, out / ("tune_log_" + std::to_string(i) + ".csv"));
  }
  std::cout << "tuned " << selection.representatives.size() << " prompts into "
            << out << "\n";
  return kOk;
}

// ---- store --------------------------------------------------------------

struct StoreOptions {
  std::string prompts_dir;
  double wv_tolerance = 0.01;
  int wv_max_iters = 20;
};

int run_store(const GlobalOptions& g, const StoreOptions& o) {
  require_out(g);
  SearchConfig cfg = make_search(g);
  cfg.variation.global_sigma = g.sigma;
  cfg.variation.seed = g.seed;

  PromptStore store(resolve_profile(g.profile), BitSliceLayout{2}, cfg);
  WriteVerifyPolicy policy;
  policy.enabled = g.write_verify;
  policy.tolerance = o.wv_tolerance;
  policy.max_iters = o.wv_max_iters;

  std::vector<fs::path> metas;
  for (const auto& entry : fs::directory_iterator(o.prompts_dir)) {
    if (entry.path().extension() == ".json" &&
        entry.path().filename().string().rfind("prompt_", 0) == 0) {
      metas.push_back(entry.path());
    }
  }
  std::sort(metas.begin(), metas.end());
  if (metas.empty()) {
    throw StateError("no prompt_*.json files in " + o.prompts_dir);
  }

  Rng rng(g.seed);
  for (const auto& meta : metas) {
    store.program(load_encoded_prompt(meta), policy, rng);
  }
  store.save(g.out_dir);
  std::cout << "programmed " << metas.size() << " prompts into " << g.out_dir
            << " (" << store.subarrays().size() << " subarrays)\n";
  return kOk;
}

// ---- query --------------------------------------------------------------

struct QueryOptions {
  std::string store_dir;
  std::string autoencoder;
  std::string queries;
  int index = 0;
};

int run_query(const GlobalOptions& g, const QueryOptions& o) {
  const PromptStore store = PromptStore::load(o.store_dir);
  const LinearAutoencoder ae = load_autoencoder(o.autoencoder);
  const auto queries = read_samples_jsonl(o.queries);
  if (o.index < 0 || o.index >= static_cast<int>(queries.size())) {
    throw std::invalid_argument("--index out of range: file has " +
                                std::to_string(queries.size()) + " queries");
  }
  const auto& q = queries[static_cast<std::size_t>(o.index)];
  const EncodedPrompt eq = encode({q.embedding, q.id, q.domain_tag}, ae);
  Matrix query(eq.data.rows(), eq.data.cols());
  for (Eigen::Index i = 0; i < query.rows(); ++i)
    for (Eigen::Index j = 0; j < query.cols(); ++j)
      query(i, j) = static_cast<double>(eq.data(i, j)) * eq.scale;

  SearchConfig cfg = store.config();
  Rng rng(g.seed);
  const RetrievalResult hit =
      method_from_name(g.method) == Method::kSsa
          ? store.retrieve(query, cfg, rng)
          : store.retrieve_mips(query, cfg, rng);

  nlohmann::json j;
  j["query_id"] = q.id;
  if (q.domain_tag) j["query_domain"] = *q.domain_tag;
  j["retrieved_id"] = hit.id;
  j["score"] = hit.score;
  if (hit.domain_tag) j["retrieved_domain"] = *hit.domain_tag;
  std::cout << j.dump(2) << "\n";
  return kOk;
}

// ---- sweep / report -----------------------------------------------------

struct SweepOptions {
  std::string config_file;
  std::vector<int> buffer_sizes;
  std::vector<double> sigmas;
  std::vector<std::uint64_t> seeds;
};

int run_sweep(const GlobalOptions& g, const SweepOptions& o) {
  require_out(g);
  RunConfig cfg;
  if (!o.config_file.empty()) {
    cfg = run_config_from_json_file(o.config_file);
  }
  // CLI values override the config file.
  if (!o.buffer_sizes.empty()) cfg.buffer_sizes = o.buffer_sizes;
  if (!o.sigmas.empty()) cfg.sigmas = o.sigmas;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  cfg.base.profile = resolve_profile(g.profile);
  cfg.base.search = make_search(g);
  cfg.methods = {method_from_name(g.method)};
  cfg.noise_aware_options = {parse_on_off(g.noise_aware, "--noise-aware")};
  cfg.write_verify_options = {g.write_verify};

  const auto rows = sweep(cfg);
  fs::create_directories(g.out_dir);
  const fs::path csv = fs::path(g.out_dir) / "sweep.csv";
  write_csv(rows, csv);

  double wall = 0.0;
  for (const auto& r : rows) wall += r.wall_ms;
  std::ofstream summary(fs::path(g.out_dir) / "summary.txt");
  summary << summarize(rows);
  summary << "total wall time: " << wall / 1000.0 << " s over " << rows.size()
          << " runs\n";
  std::cout << summarize(rows);
  std::cout << "wrote " << csv << " (" << rows.size() << " rows)\n";
  return kOk;
}

int run_report(const std::string& csv_file) {
  std::cout << summarize(read_csv(csv_file));
  return kOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crossbar-backed soft-prompt store simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Master RNG seed");
  app.add_option("--profile", g.profile,
                 "Device profile: nvm-1..nvm-5 or a JSON file");
  app.add_option("--sigma", g.sigma, "Write-time relative variation");
  app.add_option("--scales", g.scales, "Pooling scales")->delimiter(',');
  app.add_option("--weights", g.weights, "Per-scale weights")->delimiter(',');
  app.add_flag("--write-verify", g.write_verify, "Enable write-verify");
  app.add_option("--method", g.method, "Retrieval method: ssa|mips");
  app.add_option("--noise-aware", g.noise_aware, "Noise-aware tuning: on|off");
  app.add_option("--out", g.out_dir, "Output directory");

  GenOptions gen;
  auto* cmd_gen = app.add_subcommand("gen", "Generate a synthetic workload");
  cmd_gen->add_option("--domains", gen.domains);
  cmd_gen->add_option("--samples-per-domain", gen.samples_per_domain);
  cmd_gen->add_option("--queries-per-domain", gen.queries_per_domain);
  cmd_gen->add_option("--dim", gen.dim);
  cmd_gen->add_option("--tokens", gen.tokens);
  cmd_gen->add_option("--separation", gen.separation);

  TuneOptions tune;
  auto* cmd_tune = app.add_subcommand("tune", "Select representatives and tune prompts");
  cmd_tune->add_option("--workload", tune.workload_dir, "Directory written by gen")
      ->required();
  cmd_tune->add_option("--buffer-size", tune.buffer_size);
  cmd_tune->add_option("--steps", tune.steps);
  cmd_tune->add_option("--lr", tune.lr);
  cmd_tune->add_option("--sigma-train", tune.sigma_train);
  cmd_tune->add_option("--ae-epochs", tune.ae_epochs);
  cmd_tune->add_option("--ae-update-epochs", tune.ae_update_epochs);
  cmd_tune->add_option("--ae-lr", tune.ae_lr);
  cmd_tune->add_option("--code-dim", tune.code_dim);
  cmd_tune->add_option("--task-gain", tune.task_gain);
  cmd_tune->add_flag("--largest-cluster-only", tune.largest_cluster_only,
                     "Select only the largest cluster's representative");

  StoreOptions sto;
  auto* cmd_store = app.add_subcommand("store", "Program prompts into a crossbar store");
  cmd_store->add_option("--prompts", sto.prompts_dir, "Directory written by tune")
      ->required();
  cmd_store->add_option("--wv-tolerance", sto.wv_tolerance);
  cmd_store->add_option("--wv-iters", sto.wv_max_iters);

  QueryOptions qry;
  auto* cmd_query = app.add_subcommand("query", "Retrieve the best prompt for one query");
  cmd_query->add_option("--store", qry.store_dir)->required();
  cmd_query->add_option("--autoencoder", qry.autoencoder)->required();
  cmd_query->add_option("--input", qry.queries, "queries.jsonl to read from")
      ->required();
  cmd_query->add_option("--index", qry.index, "Query row index");

  SweepOptions swp;
  auto* cmd_sweep = app.add_subcommand("sweep", "Run the full experiment grid");
  cmd_sweep->add_option("--config", swp.config_file, "JSON config (CLI overrides it)");
  cmd_sweep->add_option("--buffers", swp.buffer_sizes, "Buffer sizes")->delimiter(',');
  cmd_sweep->add_option("--sigmas", swp.sigmas, "Variation sweep values")->delimiter(',');
  cmd_sweep->add_option("--seeds", swp.seeds, "Seeds to average over")->delimiter(',');

  std::string report_csv;
  auto* cmd_report = app.add_subcommand("report", "Summarize a sweep CSV");
  cmd_report->add_option("--csv", report_csv)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kArgumentError;
  }

  try {
    if (app.got_subcommand(cmd_gen)) return run_gen(g, gen);
    if (app.got_subcommand(cmd_tune)) return run_tune(g, tune);
    if (app.got_subcommand(cmd_store)) return run_store(g, sto);
    if (app.got_subcommand(cmd_query)) return run_query(g, qry);
    if (app.got_subcommand(cmd_sweep)) return run_sweep(g, swp);
    if (app.got_subcommand(cmd_report)) return run_report(report_csv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kArgumentError;
  } catch (const std::domain_error& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kArgumentError;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return kStateError;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoError;
  }
  return kOk;
}
