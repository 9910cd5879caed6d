/*
 *  Copyright 2026 The kernelmap Authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 */

// kmap: train, project, contour, evaluate and serve kernel-regression maps.

#include "kmap/bench.hpp"
#include "kmap/contour.hpp"
#include "kmap/dataio.hpp"
#include "kmap/server.hpp"
#include "kmap/synthetic.hpp"
#include "kmap/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

namespace {

enum Exit : int { kOk = 0, kUsage = 2, kData = 3, kDiverged = 4, kInternal = 5 };

int report_error(std::string_view code, const std::string& message, int status) {
  std::cerr << nlohmann::json{{"error", std::string(code)}, {"message", message}}.dump() << '\n';
  return status;
}

int exit_status(kmap::ErrorCode code) {
  switch (code) {
    case kmap::ErrorCode::diverged_training: return kDiverged;
    case kmap::ErrorCode::invalid_config:
    case kmap::ErrorCode::invalid_n:
    case kmap::ErrorCode::invalid_count: return kUsage;
    default: return kData;
  }
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

kmap::BBox parse_bbox(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      kmap::fail(kmap::ErrorCode::invalid_config, "bbox must be xmin,xmax,ymin,ymax");
    }
  }
  if (v.size() != 4) kmap::fail(kmap::ErrorCode::invalid_config, "bbox must be xmin,xmax,ymin,ymax");
  kmap::BBox box{v[0], v[1], v[2], v[3]};
  if (!box.valid()) kmap::fail(kmap::ErrorCode::invalid_config, "bbox needs min < max on both axes");
  return box;
}

struct TrainArgs {
  std::string data, out, history, config;
  kmap::TrainConfig cfg;
  std::string balance = "none";
  bool no_kr = false;
  bool fixed_kernel = false;
  bool quiet = false;
};

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--epochs", a.cfg.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", a.cfg.batch, "Batch size (capped at N)")->capture_default_str();
  cmd->add_option("--lr", a.cfg.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--lambda", a.cfg.lambda, "Regression loss weight")->capture_default_str();
  cmd->add_option("--w1", a.cfg.w1, "Validation MSE weight")->capture_default_str();
  cmd->add_option("--w2", a.cfg.w2, "Training MSE weight")->capture_default_str();
  cmd->add_option("--seed", a.cfg.seed, "Seed for init, splits and batches")->capture_default_str();
  cmd->add_flag("--no-kr", a.no_kr, "Drop the regression loss");
  cmd->add_flag("--fixed-kernel", a.fixed_kernel, "Freeze the kernel at alpha = beta = 1");
  cmd->add_option("--balance", a.balance, "Loss balancing")
      ->check(CLI::IsMember({"none", "l1", "l2"}))
      ->capture_default_str();
  cmd->add_option("--mu", a.cfg.balance.mu, "KL balancing offset")->capture_default_str();
  cmd->add_option("--mu1", a.cfg.balance.mu1, "MSE balancing offset")->capture_default_str();
  cmd->add_option("--k", a.cfg.balance.k, "Balancing slope")->capture_default_str();
  cmd->add_flag("--deterministic", a.cfg.deterministic, "Single-threaded, bit-reproducible");
  cmd->add_option("--config", a.config, "Flat JSON config; command-line flags take precedence");
}

// Config file first, then any flag given explicitly on the command line.
kmap::TrainConfig resolve_config(CLI::App* cmd, TrainArgs& a) {
  kmap::TrainConfig cfg = a.cfg;
  if (!a.config.empty()) {
    cfg = kmap::load_config(a.config);
    auto given = [cmd](const char* name) { return cmd->count(name) > 0; };
    if (given("--epochs")) cfg.epochs = a.cfg.epochs;
    if (given("--batch")) cfg.batch = a.cfg.batch;
    if (given("--lr")) cfg.lr = a.cfg.lr;
    if (given("--lambda")) cfg.lambda = a.cfg.lambda;
    if (given("--w1")) cfg.w1 = a.cfg.w1;
    if (given("--w2")) cfg.w2 = a.cfg.w2;
    if (given("--seed")) cfg.seed = a.cfg.seed;
    if (given("--mu")) cfg.balance.mu = a.cfg.balance.mu;
    if (given("--mu1")) cfg.balance.mu1 = a.cfg.balance.mu1;
    if (given("--k")) cfg.balance.k = a.cfg.balance.k;
    if (given("--deterministic")) cfg.deterministic = true;
    if (given("--balance")) cfg.balance.mode = kmap::parse_balance_mode(a.balance);
    if (a.no_kr) cfg.ablate_kr = true;
    if (a.fixed_kernel) cfg.ablate_gk = true;
  } else {
    cfg.balance.mode = kmap::parse_balance_mode(a.balance);
    cfg.ablate_kr = a.no_kr;
    cfg.ablate_gk = a.fixed_kernel;
  }
  kmap::validate(cfg);
  return cfg;
}

int run_train(CLI::App* cmd, TrainArgs& a) {
  const kmap::TrainConfig cfg = resolve_config(cmd, a);
  const kmap::Dataset data = kmap::load_dataset(a.data);
  auto result = kmap::train<float>(data, cfg, [&](std::size_t epoch, const kmap::EpochRecord& r) {
    if (!a.quiet) {
      std::fprintf(stderr, "epoch %zu loss %.6f mse_r %.6f kl %.6f alpha %.4f beta %.4f\n", epoch + 1,
                   r.loss.total, r.loss.mse_r, r.loss.kl, r.alpha, r.beta);
    }
  });
  kmap::save_checkpoint(a.out, result.model);
  const std::string history_path = a.history.empty() ? a.out + ".history.json" : a.history;
  const nlohmann::json history{{"config", kmap::config_to_json(cfg)},
                               {"n", data.size()},
                               {"d", data.dim()},
                               {"epochs", kmap::history_to_json(result.history)}};
  kmap::write_file(history_path, history.dump(2) + "\n");
  return kOk;
}

int run_project(const std::string& model_path, const std::string& data_path, const std::string& out) {
  const kmap::Dataset data = kmap::load_dataset(data_path);
  const auto model = kmap::load_checkpoint<float>(model_path, data.dim());
  const kmap::Projection2D proj = kmap::project_dataset(model, data);
  std::ostringstream os;
  os.precision(9);
  os << "id,x,y,score\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    os << kmap::detail::csv_field(data.id_of(i)) << ',' << proj.normalized(r, 0) << ','
       << proj.normalized(r, 1) << ',' << data.s[i] << '\n';
  }
  kmap::write_file(out, os.str());
  return kOk;
}

int run_contour(const std::string& model_path, const std::string& data_path, const std::string& out,
                std::size_t grid, const std::string& bbox_text, double tau, const std::string& image) {
  const kmap::Dataset data = kmap::load_dataset(data_path);
  const auto model = kmap::load_checkpoint<float>(model_path, data.dim());
  const kmap::ContourMap map = kmap::build_contour_map(model, data);
  const kmap::BBox box = bbox_text.empty() ? kmap::BBox{} : parse_bbox(bbox_text);
  const kmap::ContourGrid g = map.grid(box, grid, grid, tau);
  kmap::write_file(out, kmap::grid_to_json(g, map.score_min(), map.score_max()).dump() + "\n");
  if (!image.empty()) kmap::write_file(image, kmap::grid_to_ppm(g, map.score_min(), map.score_max()));
  return kOk;
}

void write_reports(const std::string& out, const std::vector<kmap::EvalReport>& rows) {
  if (ends_with(out, ".json")) {
    kmap::write_file(out, kmap::reports_to_json(rows).dump(2) + "\n");
  } else {
    kmap::write_file(out, kmap::reports_to_csv(rows));
  }
}

int run_eval(const std::string& model_path, const std::string& train_path, const std::string& test_path,
             const std::string& out) {
  const kmap::Dataset train_set = kmap::load_dataset(train_path);
  const kmap::Dataset test_set = kmap::load_dataset(test_path);
  auto model = std::make_shared<const kmap::ModelState<float>>(
      kmap::load_checkpoint<float>(model_path, train_set.dim()));
  const auto t0 = std::chrono::steady_clock::now();
  const kmap::FittedMethod fit = kmap::fit_from_model(model, train_set);
  kmap::EvalReport rep = kmap::evaluate_fit(fit, "akrmap", train_set, test_set, model->seed, {});
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_reports(out, {rep});
  return kOk;
}

int run_bench(CLI::App* cmd, TrainArgs& a, const std::string& test_path, const std::string& methods_text,
              std::size_t seeds) {
  kmap::BenchOptions options;
  options.train = resolve_config(cmd, a);
  const kmap::Dataset train_set = kmap::load_dataset(a.data);
  const kmap::Dataset test_set = kmap::load_dataset(test_path);
  std::vector<kmap::MethodSpec> methods;
  std::stringstream ss(methods_text);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (!name.empty()) methods.push_back(kmap::parse_method(name));
  }
  if (methods.empty()) kmap::fail(kmap::ErrorCode::invalid_config, "no methods given");
  if (seeds == 0) kmap::fail(kmap::ErrorCode::invalid_config, "seeds must be positive");
  std::vector<std::uint64_t> seed_list;
  for (std::size_t k = 1; k <= seeds; ++k) seed_list.push_back(k);
  write_reports(a.out, kmap::run_benchmark(train_set, test_set, methods, seed_list, options));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel-regression maps of embedding spaces"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a projection and kernel on a dataset");
  train_cmd->add_option("--data", train_args.data, "Dataset (binary or CSV)")->required();
  train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();
  train_cmd->add_option("--history", train_args.history, "Per-epoch history (default <out>.history.json)");
  train_cmd->add_flag("--quiet", train_args.quiet, "No per-epoch progress on stderr");
  add_train_options(train_cmd, train_args);

  std::string model_path, data_path, out_path;
  auto* project_cmd = app.add_subcommand("project", "Write normalized 2D positions as CSV");
  project_cmd->add_option("--model", model_path)->required();
  project_cmd->add_option("--data", data_path)->required();
  project_cmd->add_option("--out", out_path)->required();

  std::size_t grid = kmap::kDefaultGridSize;
  std::string bbox_text, image_path;
  double tau = kmap::kDefaultCutoff;
  auto* contour_cmd = app.add_subcommand("contour", "Export a contour grid");
  contour_cmd->add_option("--model", model_path)->required();
  contour_cmd->add_option("--data", data_path)->required();
  contour_cmd->add_option("--out", out_path)->required();
  contour_cmd->add_option("--grid", grid, "Cells per axis")->capture_default_str()->check(CLI::Range(2, 100000));
  contour_cmd->add_option("--bbox", bbox_text, "xmin,xmax,ymin,ymax in normalized units");
  contour_cmd->add_option("--tau", tau, "Empty-area cutoff distance; 0 disables")->capture_default_str();
  contour_cmd->add_option("--image", image_path, "Also write a PPM raster");

  std::string train_path, test_path;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate one trained model");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--train", train_path)->required();
  eval_cmd->add_option("--test", test_path)->required();
  eval_cmd->add_option("--out", out_path, "Report (.json for JSON, otherwise CSV)")->required();

  TrainArgs bench_args;
  std::string methods = "akrmap,akrmap_no_kr,akrmap_no_gk,pca_rbf_silverman";
  std::size_t seeds = 1;
  auto* bench_cmd = app.add_subcommand("bench", "Benchmark methods over seeds");
  bench_cmd->add_option("--data", bench_args.data, "Training dataset")->required();
  bench_cmd->add_option("--test", test_path, "Held-out dataset")->required();
  bench_cmd->add_option("--methods", methods, "Comma-separated method list")->capture_default_str();
  bench_cmd->add_option("--seeds", seeds, "Number of seeds (1..K)")->capture_default_str();
  bench_cmd->add_option("--out", bench_args.out, "Report (.json for JSON, otherwise CSV)")->required();
  add_train_options(bench_cmd, bench_args);

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP exploration API");
  serve_cmd->add_option("--model", model_path)->required();
  serve_cmd->add_option("--data", data_path)->required();
  serve_cmd->add_option("--port", port)->capture_default_str()->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", host)->capture_default_str();

  kmap::SyntheticSpec synth;
  std::string synth_train, synth_test;
  std::size_t synth_n = 2000, synth_n_test = 500;
  bool synth_csv = false;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic two-bump task");
  synth_cmd->add_option("--out", synth_train, "Training set path")->required();
  synth_cmd->add_option("--test-out", synth_test, "Held-out set path");
  synth_cmd->add_option("--n", synth_n, "Training rows")->capture_default_str();
  synth_cmd->add_option("--n-test", synth_n_test, "Held-out rows")->capture_default_str();
  synth_cmd->add_option("--dim", synth.dim, "Embedding dimension")->capture_default_str();
  synth_cmd->add_option("--score-noise", synth.score_noise, "Score noise std")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_flag("--csv", synth_csv, "Write CSV instead of binary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what(), kUsage);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*train_cmd) return run_train(train_cmd, train_args);
    if (*project_cmd) return run_project(model_path, data_path, out_path);
    if (*contour_cmd) return run_contour(model_path, data_path, out_path, grid, bbox_text, tau, image_path);
    if (*eval_cmd) return run_eval(model_path, train_path, test_path, out_path);
    if (*bench_cmd) return run_bench(bench_cmd, bench_args, test_path, methods, seeds);
    if (*serve_cmd) {
      const kmap::Dataset data = kmap::load_dataset(data_path);
      const auto model = kmap::load_checkpoint<float>(model_path, data.dim());
      const kmap::ExplorerApi api(kmap::build_contour_map(model, data), data);
      std::cerr << "listening on " << host << ':' << port << '\n';
      kmap::serve(api, host, port);
      return kOk;
    }
    if (*synth_cmd) {
      auto [train_set, test_set] = kmap::make_synthetic_split(synth, synth_n, synth_n_test);
      const auto format = synth_csv ? kmap::DatasetFormat::csv : kmap::DatasetFormat::binary;
      kmap::save_dataset(synth_train, train_set, format);
      if (!synth_test.empty()) kmap::save_dataset(synth_test, test_set, format);
      return kOk;
    }
  } catch (const kmap::Error& e) {
    return report_error(kmap::error_code_name(e.code()), e.what(), exit_status(e.code()));
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kInternal);
  }
  return kUsage;
}
