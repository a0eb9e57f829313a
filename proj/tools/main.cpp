#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>

#include "relapse/ablate.hpp"
#include "relapse/config.hpp"
#include "relapse/pipeline.hpp"

// relapse: command-line front end for the smartwatch relapse-detection
// pipelines. Stages write versioned artifacts under the output root:
//   synth -> data/*.csv
//   train -> models/<pipeline>/seed<k>/<patient>.json
//   score -> scores/<pipeline>_seed<k>.csv
//   fuse  -> scores/fused_seed<k>.csv
//   eval  -> reports/metrics.json
// Exit codes: 0 ok, 2 config error, 3 stage-order error, 4 data error.

namespace {

using relapse::ExperimentConfig;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int seeds_n = 0;
  int threads = -1;
  int epochs = 0;
  int n_train = 0, n_val = 0, n_test = 0;
  int d_model = 0, n_layers = 0, ffn_dim = 0;
  int window_size = 0, stride = 0;
  std::string severity, posenc, fusion_mode;
  double alpha = -1.0;
  bool grid_search = false;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "experiment config JSON");
  sub->add_option("--out", args.out_dir, "output root directory");
  sub->add_option("--seeds", args.seeds_n, "run seeds 1..N (default: config)");
  sub->add_option("--threads", args.threads, "worker threads (0 = all cores)");
  sub->add_option("--epochs", args.epochs, "training epochs");
  sub->add_option("--n-train", args.n_train, "training days per patient");
  sub->add_option("--n-val", args.n_val, "validation days per patient");
  sub->add_option("--n-test", args.n_test, "test days per patient");
  sub->add_option("--d-model", args.d_model, "encoder width");
  sub->add_option("--n-layers", args.n_layers, "encoder depth");
  sub->add_option("--ffn-dim", args.ffn_dim, "feed-forward width");
  sub->add_option("--window-size", args.window_size, "window length in slots");
  sub->add_option("--stride", args.stride, "window stride (both pipelines)");
  sub->add_option("--severity", args.severity, "relapse regime preset");
  sub->add_option("--posenc", args.posenc,
                  "positional mode for both pipelines");
  sub->add_option("--fusion-mode", args.fusion_mode, "weighted|max|min");
  sub->add_option("--alpha", args.alpha, "weighted-fusion alpha");
  sub->add_flag("--grid-search", args.grid_search,
                "pick alpha/tau on the validation split");
}

ExperimentConfig make_config(const CommonArgs& args) {
  ExperimentConfig cfg = args.config_path.empty()
                             ? ExperimentConfig{}
                             : relapse::load_config(args.config_path);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (args.seeds_n > 0) {
    cfg.seeds.clear();
    for (int i = 1; i <= args.seeds_n; ++i)
      cfg.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  if (args.threads >= 0) cfg.threads = args.threads;
  if (args.epochs > 0) cfg.epochs = args.epochs;
  if (args.n_train > 0) cfg.n_train = args.n_train;
  if (args.n_val > 0) cfg.n_val = args.n_val;
  if (args.n_test > 0) cfg.n_test = args.n_test;
  if (args.d_model > 0) cfg.d_model = args.d_model;
  if (args.n_layers > 0) cfg.n_layers = args.n_layers;
  if (args.ffn_dim > 0) cfg.ffn_dim = args.ffn_dim;
  if (args.window_size > 0) cfg.window_size = args.window_size;
  if (args.stride > 0) {
    cfg.stride_forecast = args.stride;
    cfg.stride_multitask = args.stride;
  }
  if (!args.severity.empty()) cfg.severity = args.severity;
  if (!args.posenc.empty()) {
    cfg.posenc_forecast = args.posenc;
    cfg.posenc_multitask = args.posenc;
  }
  if (!args.fusion_mode.empty()) cfg.fusion_mode = args.fusion_mode;
  if (args.alpha >= 0.0) cfg.fusion_alpha = args.alpha;
  if (args.grid_search) cfg.grid_search = true;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smartwatch relapse-detection pipelines"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string pipeline = "both";
  std::string axis;

  auto* synth = app.add_subcommand("synth", "generate the synthetic cohort");
  add_common(synth, args);

  auto* train = app.add_subcommand("train", "train patient models");
  add_common(train, args);
  train->add_option("--pipeline", pipeline, "forecast|multitask|both")
      ->check(CLI::IsMember({"forecast", "multitask", "both"}));

  auto* score = app.add_subcommand("score", "compute day-level uncertainty");
  add_common(score, args);
  score->add_option("--pipeline", pipeline, "forecast|multitask|both")
      ->check(CLI::IsMember({"forecast", "multitask", "both"}));

  auto* fuse = app.add_subcommand("fuse", "late-fuse the anomaly scores");
  add_common(fuse, args);

  auto* eval = app.add_subcommand("eval", "evaluate AUROC/AUPRC/AVG");
  add_common(eval, args);

  auto* ablate = app.add_subcommand("ablate", "sweep one axis");
  add_common(ablate, args);
  ablate->add_option("axis", axis, "posenc|stride|window|tau|alpha")
      ->required()
      ->check(CLI::IsMember({"posenc", "stride", "window", "tau", "alpha"}));

  auto* report = app.add_subcommand("report", "render aggregate tables");
  add_common(report, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig cfg = make_config(args);
    if (synth->parsed()) {
      relapse::run_synth(cfg);
    } else if (train->parsed()) {
      if (pipeline != "multitask") relapse::run_train(cfg, "forecast");
      if (pipeline != "forecast") relapse::run_train(cfg, "multitask");
    } else if (score->parsed()) {
      if (pipeline != "multitask") relapse::run_score(cfg, "forecast");
      if (pipeline != "forecast") relapse::run_score(cfg, "multitask");
    } else if (fuse->parsed()) {
      relapse::run_fuse(cfg);
    } else if (eval->parsed()) {
      relapse::run_eval(cfg);
    } else if (ablate->parsed()) {
      relapse::run_ablate(cfg, axis);
    } else if (report->parsed()) {
      relapse::run_report(cfg);
    }
    return 0;
  } catch (const relapse::StageOrderError& e) {
    std::cerr << "stage-order error: " << e.what() << "\n";
    return 3;
  } catch (const relapse::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
