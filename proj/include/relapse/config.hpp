#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relapse/encoder.hpp"
#include "relapse/io.hpp"
#include "relapse/rng.hpp"
#include "relapse/scoring.hpp"
#include "relapse/synth.hpp"
#include "relapse/training.hpp"
#include "relapse/windows.hpp"

// Experiment configuration: one JSON document drives every stage. Defaults
// follow the training setup (lr 1e-3, wd 5e-4, batch 16, 50 epochs, K=5)
// and the per-pipeline choices that performed best in the ablations.

namespace relapse {

using nlohmann::json;

struct ExperimentConfig {
  // paths
  std::string output_dir = "out";

  // synthetic cohort
  int n_patients = 8;
  int n_train = 200;
  int n_val = 87;
  int n_test = 85;
  std::string severity = "moderate";
  bool alternate_variants = true;  // alternate cardiac/sleep-dominant relapses
  double missing_rate = 0.0;
  std::uint64_t data_seed = 7;
  std::vector<PatientProfile> profiles;  // empty: built-in default cohort

  // windows
  int window_size = 24;
  int stride_forecast = 12;
  int stride_multitask = 24;

  // encoder (positional mode chosen per pipeline)
  std::int64_t d_model = 64;
  std::int64_t n_heads = 4;
  std::int64_t n_layers = 2;
  std::int64_t ffn_dim = 128;
  double dropout_rate = 0.1;
  std::string posenc_forecast = "sinusoidal";
  std::string posenc_multitask = "alibi";

  // optimizer
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  int batch_size = 16;
  int epochs = 50;

  // ensembles
  int ensemble_size = 5;
  double resample_fraction = 0.2;

  // multi-task weights
  double sleep_loss_weight = 1.0;
  double time_variance_weight = 0.7;
  double sleep_variance_weight = 0.3;

  // thresholds and fusion
  double tau_forecast = -0.1;
  double tau_multitask = -0.2;
  double tau_fused = -0.1;
  std::string fusion_mode = "weighted";
  double fusion_alpha = 0.7;
  bool grid_search = false;

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  int threads = 0;  // 0: hardware concurrency

  EncoderConfig encoder_config(const std::string& pipeline) const {
    EncoderConfig cfg;
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.n_layers = n_layers;
    cfg.ffn_dim = ffn_dim;
    cfg.dropout_rate = dropout_rate;
    cfg.positional_mode = positional_mode_from_string(
        pipeline == "forecast" ? posenc_forecast : posenc_multitask);
    cfg.validate();
    return cfg;
  }

  TrainConfig train_config() const {
    return {learning_rate, weight_decay, batch_size, epochs};
  }

  int stride(const std::string& pipeline) const {
    return pipeline == "forecast" ? stride_forecast : stride_multitask;
  }

  double tau(const std::string& pipeline) const {
    return pipeline == "forecast" ? tau_forecast : tau_multitask;
  }

  void validate() const {
    if (profiles.empty()) {
      if (n_patients < 1 || n_patients > 8)
        throw std::invalid_argument("config: n_patients must be in [1,8]");
    } else {
      if (n_patients != static_cast<int>(profiles.size()))
        throw std::invalid_argument(
            "config: n_patients must match the profiles list");
      for (const auto& p : profiles) p.validate();
    }
    if (n_train <= 0 || n_val <= 0 || n_test <= 0)
      throw std::invalid_argument("config: day counts must be positive");
    if (batch_size < 1 || epochs < 1)
      throw std::invalid_argument("config: batch_size and epochs must be >= 1");
    if (ensemble_size < 2)
      throw std::invalid_argument("config: ensemble_size must be >= 2");
    if (resample_fraction < 0.0 || resample_fraction > 1.0)
      throw std::invalid_argument("config: resample_fraction in [0,1]");
    if (fusion_alpha < 0.0 || fusion_alpha > 1.0)
      throw std::invalid_argument("config: fusion_alpha in [0,1]");
    if (seeds.empty()) throw std::invalid_argument("config: need >= 1 seed");
    window_count(window_size, stride_forecast);
    window_count(window_size, stride_multitask);
    severity_from_string(severity);
    fusion_mode_from_string(fusion_mode);
    encoder_config("forecast");
    encoder_config("multitask");
  }
};

inline json profile_to_json(const PatientProfile& p) {
  json j;
  j["id"] = p.id;
  j["base_hr"] = p.base_hr;
  j["hrv_level"] = p.hrv_level;
  j["circadian_amplitude"] = p.circadian_amplitude;
  j["circadian_phase_h"] = p.circadian_phase_h;
  j["activity_level"] = p.activity_level;
  j["sleep_onset_mean_min"] = p.sleep_onset_mean_min;
  j["wake_mean_min"] = p.wake_mean_min;
  j["sleep_jitter_min"] = p.sleep_jitter_min;
  j["hr_noise"] = p.hr_noise;
  j["hrv_noise"] = p.hrv_noise;
  j["activity_noise"] = p.activity_noise;
  j["missing_rate"] = p.missing_rate;
  j["heavy_tailed"] = p.heavy_tailed;
  return j;
}

inline PatientProfile profile_from_json(const json& j) {
  PatientProfile p;
  const json defaults = profile_to_json(p);
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key))
      throw std::invalid_argument("config: unknown profile field '" + key + "'");
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  get("id", p.id);
  get("base_hr", p.base_hr);
  get("hrv_level", p.hrv_level);
  get("circadian_amplitude", p.circadian_amplitude);
  get("circadian_phase_h", p.circadian_phase_h);
  get("activity_level", p.activity_level);
  get("sleep_onset_mean_min", p.sleep_onset_mean_min);
  get("wake_mean_min", p.wake_mean_min);
  get("sleep_jitter_min", p.sleep_jitter_min);
  get("hr_noise", p.hr_noise);
  get("hrv_noise", p.hrv_noise);
  get("activity_noise", p.activity_noise);
  get("missing_rate", p.missing_rate);
  get("heavy_tailed", p.heavy_tailed);
  return p;
}

namespace detail {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config field '") + key +
                                "': " + e.what());
  }
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["output_dir"] = c.output_dir;
  j["n_patients"] = c.n_patients;
  j["n_train"] = c.n_train;
  j["n_val"] = c.n_val;
  j["n_test"] = c.n_test;
  j["severity"] = c.severity;
  j["alternate_variants"] = c.alternate_variants;
  j["missing_rate"] = c.missing_rate;
  j["data_seed"] = c.data_seed;
  json profiles = json::array();
  for (const auto& p : c.profiles) profiles.push_back(profile_to_json(p));
  j["profiles"] = std::move(profiles);
  j["window_size"] = c.window_size;
  j["stride_forecast"] = c.stride_forecast;
  j["stride_multitask"] = c.stride_multitask;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["ffn_dim"] = c.ffn_dim;
  j["dropout_rate"] = c.dropout_rate;
  j["posenc_forecast"] = c.posenc_forecast;
  j["posenc_multitask"] = c.posenc_multitask;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["ensemble_size"] = c.ensemble_size;
  j["resample_fraction"] = c.resample_fraction;
  j["sleep_loss_weight"] = c.sleep_loss_weight;
  j["time_variance_weight"] = c.time_variance_weight;
  j["sleep_variance_weight"] = c.sleep_variance_weight;
  j["tau_forecast"] = c.tau_forecast;
  j["tau_multitask"] = c.tau_multitask;
  j["tau_fused"] = c.tau_fused;
  j["fusion_mode"] = c.fusion_mode;
  j["fusion_alpha"] = c.fusion_alpha;
  j["grid_search"] = c.grid_search;
  j["seeds"] = c.seeds;
  j["threads"] = c.threads;
  return j;
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  const json defaults = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key))
      throw std::invalid_argument("config: unknown field '" + key + "'");
  detail::read_field(j, "output_dir", c.output_dir);
  detail::read_field(j, "n_patients", c.n_patients);
  detail::read_field(j, "n_train", c.n_train);
  detail::read_field(j, "n_val", c.n_val);
  detail::read_field(j, "n_test", c.n_test);
  detail::read_field(j, "severity", c.severity);
  detail::read_field(j, "alternate_variants", c.alternate_variants);
  detail::read_field(j, "missing_rate", c.missing_rate);
  detail::read_field(j, "data_seed", c.data_seed);
  if (j.contains("profiles")) {
    try {
      for (const auto& pj : j.at("profiles"))
        c.profiles.push_back(profile_from_json(pj));
    } catch (const json::exception& e) {
      throw std::invalid_argument(std::string("config field 'profiles': ") +
                                  e.what());
    }
  }
  detail::read_field(j, "window_size", c.window_size);
  detail::read_field(j, "stride_forecast", c.stride_forecast);
  detail::read_field(j, "stride_multitask", c.stride_multitask);
  detail::read_field(j, "d_model", c.d_model);
  detail::read_field(j, "n_heads", c.n_heads);
  detail::read_field(j, "n_layers", c.n_layers);
  detail::read_field(j, "ffn_dim", c.ffn_dim);
  detail::read_field(j, "dropout_rate", c.dropout_rate);
  detail::read_field(j, "posenc_forecast", c.posenc_forecast);
  detail::read_field(j, "posenc_multitask", c.posenc_multitask);
  detail::read_field(j, "learning_rate", c.learning_rate);
  detail::read_field(j, "weight_decay", c.weight_decay);
  detail::read_field(j, "batch_size", c.batch_size);
  detail::read_field(j, "epochs", c.epochs);
  detail::read_field(j, "ensemble_size", c.ensemble_size);
  detail::read_field(j, "resample_fraction", c.resample_fraction);
  detail::read_field(j, "sleep_loss_weight", c.sleep_loss_weight);
  detail::read_field(j, "time_variance_weight", c.time_variance_weight);
  detail::read_field(j, "sleep_variance_weight", c.sleep_variance_weight);
  detail::read_field(j, "tau_forecast", c.tau_forecast);
  detail::read_field(j, "tau_multitask", c.tau_multitask);
  detail::read_field(j, "tau_fused", c.tau_fused);
  detail::read_field(j, "fusion_mode", c.fusion_mode);
  detail::read_field(j, "fusion_alpha", c.fusion_alpha);
  detail::read_field(j, "grid_search", c.grid_search);
  detail::read_field(j, "seeds", c.seeds);
  detail::read_field(j, "threads", c.threads);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw std::invalid_argument("cannot open config: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + path.string() +
                                ": " + e.what());
  }
  return config_from_json(j);
}

// FNV-1a over the canonical dump; embedded in every artifact.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string dump = to_json(c).dump();
  const std::uint64_t h = hash_str(dump);
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace relapse
