#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "relapse/checkpoint.hpp"
#include "relapse/config.hpp"
#include "relapse/forecasting.hpp"
#include "relapse/io.hpp"
#include "relapse/multitask.hpp"
#include "relapse/normalize.hpp"
#include "relapse/scoring.hpp"
#include "relapse/synth.hpp"

// Stage orchestration shared by the CLI and the acceptance suite:
// synth -> train -> score -> fuse -> eval, plus the ablation sweeps.
// Every stage writes versioned artifacts under the output root and embeds
// the config hash and seed (JSON directly, CSVs via a .meta.json sidecar).

namespace relapse {

namespace fs = std::filesystem;

using ScalarT = float;  // training precision; tests gradient-check in double

struct Paths {
  fs::path root;

  explicit Paths(const ExperimentConfig& cfg) : root(resolve_root(cfg)) {}

  static fs::path resolve_root(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("RELAPSE_OUT")) return fs::path(env);
    return fs::path(cfg.output_dir);
  }

  fs::path slots_csv() const { return root / "data" / "slots.csv"; }
  fs::path days_csv() const { return root / "data" / "days.csv"; }
  fs::path checkpoint(const std::string& pipeline, std::uint64_t seed,
                      const std::string& patient) const {
    return root / "models" / pipeline / ("seed" + std::to_string(seed)) /
           (patient + ".json");
  }
  fs::path day_scores(const std::string& pipeline, std::uint64_t seed) const {
    return root / "scores" /
           (pipeline + "_seed" + std::to_string(seed) + ".csv");
  }
  fs::path fused(std::uint64_t seed) const {
    return root / "scores" / ("fused_seed" + std::to_string(seed) + ".csv");
  }
  fs::path metrics_json() const { return root / "reports" / "metrics.json"; }
  fs::path ablate_csv(const std::string& axis) const {
    return root / "reports" / ("ablate_" + axis + ".csv");
  }
  fs::path report_csv(const std::string& name) const {
    return root / "reports" / (name + ".csv");
  }
};

namespace detail {

inline void write_meta(const fs::path& artifact, const ExperimentConfig& cfg,
                       std::optional<std::uint64_t> seed) {
  json meta;
  meta["config_hash"] = config_hash(cfg);
  if (seed) meta["seed"] = *seed;
  auto out = io::open_out(fs::path(artifact.string() + ".meta.json"));
  out << meta.dump(1) << '\n';
}

template <typename Fn>
void parallel_over_patients(int n, int threads, Fn&& fn) {
  const int workers = std::min<int>(
      n, threads > 0 ? threads
                     : std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// cohort assembly
// ---------------------------------------------------------------------------

struct PatientData {
  std::string patient_id;
  std::vector<DayRecord> train, val, test;

  std::vector<DayRecord> all() const {
    std::vector<DayRecord> out = train;
    out.insert(out.end(), val.begin(), val.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
  }
};

inline std::vector<PatientData> group_by_patient(std::vector<DayRecord> days) {
  std::map<std::string, PatientData> by_id;
  for (auto& day : days) {
    auto& p = by_id[day.patient_id];
    p.patient_id = day.patient_id;
    switch (day.split) {
      case Split::kTrain: p.train.push_back(std::move(day)); break;
      case Split::kVal: p.val.push_back(std::move(day)); break;
      case Split::kTest: p.test.push_back(std::move(day)); break;
    }
  }
  std::vector<PatientData> out;
  for (auto& [id, p] : by_id) {
    auto by_date = [](const DayRecord& a, const DayRecord& b) {
      return a.date_index < b.date_index;
    };
    std::sort(p.train.begin(), p.train.end(), by_date);
    std::sort(p.val.begin(), p.val.end(), by_date);
    std::sort(p.test.begin(), p.test.end(), by_date);
    out.push_back(std::move(p));
  }
  return out;
}

// Synthetic cohort with relapse episodes injected into val and test. The
// relapse expression alternates between cardiac- and sleep-dominant
// variants across patients when configured, mirroring patient-specific
// modality dependence.
inline std::vector<PatientData> build_synthetic_cohort(
    const ExperimentConfig& cfg) {
  const auto severity = severity_from_string(cfg.severity);
  auto profiles = cfg.profiles;
  if (profiles.empty()) {
    profiles = default_cohort();
    profiles.resize(static_cast<std::size_t>(cfg.n_patients));
  }
  std::vector<PatientData> cohort(profiles.size());
  detail::parallel_over_patients(
      static_cast<int>(profiles.size()), cfg.threads, [&](int i) {
        auto profile = profiles[i];
        if (cfg.missing_rate > 0.0) profile.missing_rate = cfg.missing_rate;
        auto splits = generate_patient(profile, cfg.n_train, cfg.n_val,
                                       cfg.n_test, cfg.data_seed);
        const auto variant =
            !cfg.alternate_variants ? RegimeVariant::kBalanced
            : (i % 2 == 0 ? RegimeVariant::kCardiacDominant
                          : RegimeVariant::kSleepDominant);
        const std::uint64_t inject_seed =
            derive_seed(cfg.data_seed, hash_str("relapse"), i);

        // one episode covering ~30% of validation days
        const int val_end = cfg.n_train + cfg.n_val - 1;
        const int val_lo = std::min(cfg.n_train + cfg.n_val / 5, val_end);
        const int val_hi =
            std::min(val_lo + std::max(1, (3 * cfg.n_val) / 10) - 1, val_end);
        inject_relapse(splits.val, severity_regime(severity, val_lo, val_hi, variant),
                       derive_seed(inject_seed, 1));

        // two test episodes, ~35% of days together
        const int t0 = cfg.n_train + cfg.n_val;
        const int test_end = t0 + cfg.n_test - 1;
        const int ep1_lo = std::min(t0 + cfg.n_test / 5, test_end);
        const int ep1_hi =
            std::min(ep1_lo + std::max(1, cfg.n_test / 5) - 1, test_end);
        inject_relapse(splits.test, severity_regime(severity, ep1_lo, ep1_hi, variant),
                       derive_seed(inject_seed, 2));
        const int ep2_lo = std::max(t0 + (3 * cfg.n_test) / 5, ep1_hi + 1);
        const int ep2_hi =
            std::min(ep2_lo + std::max(1, (3 * cfg.n_test) / 20) - 1, test_end);
        if (ep2_lo <= test_end)
          inject_relapse(splits.test,
                         severity_regime(severity, ep2_lo, ep2_hi, variant),
                         derive_seed(inject_seed, 3));

        cohort[i] = PatientData{profile.id, std::move(splits.train),
                                std::move(splits.val), std::move(splits.test)};
      });
  return cohort;
}

inline void run_synth(const ExperimentConfig& cfg) {
  Paths paths(cfg);
  auto cohort = build_synthetic_cohort(cfg);
  std::vector<DayRecord> all;
  for (auto& p : cohort) {
    auto days = p.all();
    all.insert(all.end(), days.begin(), days.end());
  }
  io::write_slots_csv(paths.slots_csv(), all);
  io::write_days_csv(paths.days_csv(), all);
  detail::write_meta(paths.slots_csv(), cfg, cfg.data_seed);
  detail::write_meta(paths.days_csv(), cfg, cfg.data_seed);
  std::cerr << "[synth] wrote " << all.size() << " days for " << cohort.size()
            << " patients under " << (paths.root / "data").string() << "\n";
}

inline std::vector<PatientData> load_cohort(const Paths& paths) {
  if (!fs::exists(paths.slots_csv()) || !fs::exists(paths.days_csv()))
    throw StageOrderError("missing dataset " + paths.slots_csv().string() +
                          "; run `relapse synth` (or point --out at data) first");
  return group_by_patient(
      io::read_dataset_csv(paths.slots_csv(), paths.days_csv()));
}

// ---------------------------------------------------------------------------
// per-patient training
// ---------------------------------------------------------------------------

template <typename T>
struct ForecastModel {
  TransformerEncoder<T> encoder;
  std::vector<Mlp<T>> ensemble;
  ChannelStats stats;
  LossCurve phase1_curve;
};

// the remission baseline trains on remission days only
inline std::vector<DayRecord> remission_days(const PatientData& patient) {
  std::vector<DayRecord> days;
  for (const auto& d : patient.train)
    if (d.label == DayLabel::kRemission) days.push_back(d);
  if (days.size() < patient.train.size())
    std::cerr << "[train] " << patient.patient_id << ": dropped "
              << patient.train.size() - days.size()
              << " non-remission training days\n";
  if (days.empty())
    throw DataError("no remission training days for " + patient.patient_id);
  return days;
}

template <typename T>
ForecastModel<T> train_patient_forecast(const PatientData& patient,
                                        const ExperimentConfig& cfg,
                                        std::uint64_t seed) {
  const std::uint64_t pseed =
      derive_seed(seed, hash_str("forecast"), hash_str(patient.patient_id));
  const auto train_days = remission_days(patient);
  auto norm = normalize_features(train_days, train_days);
  auto ds = build_forecast_dataset<T>(norm.days, cfg.window_size,
                                      cfg.stride_forecast);
  ForecastModel<T> model;
  model.stats = norm.stats;
  Rng init(derive_seed(pseed, hash_str("init")));
  model.encoder = TransformerEncoder<T>(cfg.encoder_config("forecast"),
                                        kForecastInputDim, init);
  auto head = make_forecast_head<T>(cfg.d_model, init);
  model.phase1_curve =
      train_phase1(model.encoder, head, ds, cfg.train_config(),
                   derive_seed(pseed, hash_str("phase1")));
  // phase-1 head g is discarded; the ensemble is trained fresh
  model.ensemble =
      train_ensemble(model.encoder, ds, cfg.ensemble_size,
                     cfg.resample_fraction, cfg.train_config(),
                     derive_seed(pseed, hash_str("phase2")));
  return model;
}

template <typename T>
struct MultiTaskModel {
  TransformerEncoder<T> encoder;
  std::vector<Mlp<T>> time_heads;
  std::vector<Mlp<T>> sleep_heads;
  ChannelStats stats;
  std::array<double, 4> sleep_ref{};
  LossCurve curve;
};

template <typename T>
MultiTaskModel<T> train_patient_multitask(const PatientData& patient,
                                          const ExperimentConfig& cfg,
                                          std::uint64_t seed) {
  const std::uint64_t pseed =
      derive_seed(seed, hash_str("multitask"), hash_str(patient.patient_id));
  const auto train_days = remission_days(patient);
  auto norm = normalize_features(train_days, train_days);
  MultiTaskModel<T> model;
  model.stats = norm.stats;
  model.sleep_ref = reference_sleep_input(train_days);
  auto ds = build_streams<T>(norm.days, model.sleep_ref, cfg.window_size,
                             cfg.stride_multitask);
  Rng init(derive_seed(pseed, hash_str("init")));
  model.encoder = TransformerEncoder<T>(cfg.encoder_config("multitask"),
                                        kMultiTaskInputDim, init);
  auto time_head = make_time_head<T>(cfg.d_model, init);
  auto sleep_head = make_sleep_head<T>(cfg.d_model, init);
  auto result = train_multitask(model.encoder, time_head, sleep_head, ds,
                                cfg.train_config(),
                                derive_seed(pseed, hash_str("joint")),
                                cfg.sleep_loss_weight);
  model.curve = result.total;
  auto heads = train_multitask_ensemble(model.encoder, ds, cfg.ensemble_size,
                                        cfg.resample_fraction,
                                        cfg.train_config(),
                                        derive_seed(pseed, hash_str("phase2")));
  model.time_heads = std::move(heads.time_heads);
  model.sleep_heads = std::move(heads.sleep_heads);
  return model;
}

// ---------------------------------------------------------------------------
// per-patient scoring
// ---------------------------------------------------------------------------

// Day scores for every scorable day of the patient (all splits).
template <typename T>
std::vector<io::DayScoreRow> score_patient_forecast(
    const ForecastModel<T>& model, const PatientData& patient,
    const ExperimentConfig& cfg) {
  std::vector<io::DayScoreRow> rows;
  auto all_days = patient.all();
  for (auto& day : all_days) apply_normalization(day, model.stats);
  for (const auto& day : all_days) {
    std::vector<DayRecord> one = {day};
    auto ds = build_forecast_dataset<T>(one, cfg.window_size,
                                        cfg.stride_forecast);
    if (ds.windows.count == 0) {
      std::cerr << "[score] " << day.patient_id << "/" << day.date_index
                << ": no scorable windows (forecast); day excluded\n";
      continue;
    }
    const auto z = precompute_embeddings(model.encoder, ds.windows);
    const auto st =
        ensemble_statistics(model.ensemble, z, model.encoder.d_model());
    const auto u = daily_uncertainty(st.u);
    rows.push_back({day.patient_id, day.date_index, *u, "forecast", {}, {}, {}});
  }
  return rows;
}

template <typename T>
std::vector<io::DayScoreRow> score_patient_multitask(
    const MultiTaskModel<T>& model, const PatientData& patient,
    const ExperimentConfig& cfg) {
  std::vector<io::DayScoreRow> rows;
  auto all_days = patient.all();
  for (auto& day : all_days) apply_normalization(day, model.stats);
  for (const auto& day : all_days) {
    std::vector<DayRecord> one = {day};
    auto ds = build_streams<T>(one, model.sleep_ref, cfg.window_size,
                               cfg.stride_multitask);
    if (ds.windows.count == 0) {
      std::cerr << "[score] " << day.patient_id << "/" << day.date_index
                << ": no scorable windows (multitask); day excluded\n";
      continue;
    }
    const auto z = precompute_embeddings(model.encoder, ds.windows);
    const auto time_st =
        ensemble_statistics(model.time_heads, z, model.encoder.d_model());
    const auto sleep_st =
        ensemble_statistics(model.sleep_heads, z, model.encoder.d_model());
    const auto score =
        multitask_day_score(time_st.u, sleep_st.u, cfg.time_variance_weight,
                            cfg.sleep_variance_weight);
    io::DayScoreRow row{day.patient_id, day.date_index, score->combined,
                        "multitask", score->v_time, score->v_sleep,
                        score->combined};
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

template <typename T>
json forecast_checkpoint_json(const ForecastModel<T>& model,
                              const ExperimentConfig& cfg, std::uint64_t seed,
                              const std::string& patient_id) {
  json j;
  j["format"] = kCheckpointFormat;
  j["pipeline"] = "forecast";
  j["patient_id"] = patient_id;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = seed;
  j["input_dim"] = kForecastInputDim;
  j["encoder_config"] = encoder_config_to_json(model.encoder.config());
  j["stats"] = stats_to_json(model.stats);
  j["phase1_loss_curve"] = model.phase1_curve.per_epoch;
  j["encoder"] = params_to_json(model.encoder.parameters());
  json heads = json::array();
  for (std::size_t k = 0; k < model.ensemble.size(); ++k)
    heads.push_back(params_to_json(
        model.ensemble[k].parameters("head" + std::to_string(k))));
  j["ensemble"] = std::move(heads);
  return j;
}

template <typename T>
ForecastModel<T> forecast_model_from_json(const json& j) {
  ForecastModel<T> model;
  Rng scratch(0);
  model.encoder = TransformerEncoder<T>(
      encoder_config_from_json(j.at("encoder_config")),
      j.at("input_dim").get<std::int64_t>(), scratch);
  params_from_json<T>(j.at("encoder"), model.encoder.parameters());
  model.stats = stats_from_json(j.at("stats"));
  for (const auto& head : j.at("ensemble"))
    model.ensemble.push_back(mlp_from_json<T>(head));
  return model;
}

template <typename T>
json multitask_checkpoint_json(const MultiTaskModel<T>& model,
                               const ExperimentConfig& cfg, std::uint64_t seed,
                               const std::string& patient_id) {
  json j;
  j["format"] = kCheckpointFormat;
  j["pipeline"] = "multitask";
  j["patient_id"] = patient_id;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = seed;
  j["input_dim"] = kMultiTaskInputDim;
  j["encoder_config"] = encoder_config_to_json(model.encoder.config());
  j["stats"] = stats_to_json(model.stats);
  j["sleep_ref"] = model.sleep_ref;
  j["loss_curve"] = model.curve.per_epoch;
  j["encoder"] = params_to_json(model.encoder.parameters());
  json time_heads = json::array();
  for (std::size_t k = 0; k < model.time_heads.size(); ++k)
    time_heads.push_back(params_to_json(
        model.time_heads[k].parameters("time" + std::to_string(k))));
  j["time_heads"] = std::move(time_heads);
  json sleep_heads = json::array();
  for (std::size_t k = 0; k < model.sleep_heads.size(); ++k)
    sleep_heads.push_back(params_to_json(
        model.sleep_heads[k].parameters("sleep" + std::to_string(k))));
  j["sleep_heads"] = std::move(sleep_heads);
  return j;
}

template <typename T>
MultiTaskModel<T> multitask_model_from_json(const json& j) {
  MultiTaskModel<T> model;
  Rng scratch(0);
  model.encoder = TransformerEncoder<T>(
      encoder_config_from_json(j.at("encoder_config")),
      j.at("input_dim").get<std::int64_t>(), scratch);
  params_from_json<T>(j.at("encoder"), model.encoder.parameters());
  model.stats = stats_from_json(j.at("stats"));
  model.sleep_ref = j.at("sleep_ref").get<std::array<double, 4>>();
  for (const auto& head : j.at("time_heads"))
    model.time_heads.push_back(mlp_from_json<T>(head));
  for (const auto& head : j.at("sleep_heads"))
    model.sleep_heads.push_back(mlp_from_json<T>(head));
  return model;
}

// ---------------------------------------------------------------------------
// file-level stages
// ---------------------------------------------------------------------------

inline void run_train(const ExperimentConfig& cfg,
                      const std::string& pipeline) {
  Paths paths(cfg);
  auto cohort = load_cohort(paths);
  for (const std::uint64_t seed : cfg.seeds) {
    detail::parallel_over_patients(
        static_cast<int>(cohort.size()), cfg.threads, [&](int i) {
          const auto& patient = cohort[i];
          json ckpt;
          if (pipeline == "forecast") {
            auto model = train_patient_forecast<ScalarT>(patient, cfg, seed);
            ckpt = forecast_checkpoint_json(model, cfg, seed,
                                            patient.patient_id);
          } else {
            auto model = train_patient_multitask<ScalarT>(patient, cfg, seed);
            ckpt = multitask_checkpoint_json(model, cfg, seed,
                                             patient.patient_id);
          }
          write_checkpoint(
              paths.checkpoint(pipeline, seed, patient.patient_id), ckpt);
          std::cerr << "[train] " << pipeline << " seed " << seed << " "
                    << patient.patient_id << " done\n";
        });
  }
}

inline void run_score(const ExperimentConfig& cfg,
                      const std::string& pipeline) {
  Paths paths(cfg);
  auto cohort = load_cohort(paths);
  for (const std::uint64_t seed : cfg.seeds) {
    std::vector<std::vector<io::DayScoreRow>> rows(cohort.size());
    detail::parallel_over_patients(
        static_cast<int>(cohort.size()), cfg.threads, [&](int i) {
          const auto& patient = cohort[i];
          const auto ckpt = read_checkpoint(
              paths.checkpoint(pipeline, seed, patient.patient_id));
          if (pipeline == "forecast") {
            auto model = forecast_model_from_json<ScalarT>(ckpt);
            rows[i] = score_patient_forecast(model, patient, cfg);
          } else {
            auto model = multitask_model_from_json<ScalarT>(ckpt);
            rows[i] = score_patient_multitask(model, patient, cfg);
          }
        });
    std::vector<io::DayScoreRow> flat;
    for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    io::write_day_scores_csv(paths.day_scores(pipeline, seed), flat,
                             pipeline == "multitask");
    detail::write_meta(paths.day_scores(pipeline, seed), cfg, seed);
    std::cerr << "[score] " << pipeline << " seed " << seed << ": "
              << flat.size() << " day scores\n";
  }
}

// label/split lookup for joining score tables back to days
struct DayInfo {
  Split split;
  DayLabel label;
};

// the healthy distribution uses remission-labeled training days, matching
// what the models trained on
inline bool counts_as_healthy(const DayInfo& d) {
  return d.split == Split::kTrain && d.label == DayLabel::kRemission;
}
using DayKey = std::pair<std::string, int>;

inline std::map<DayKey, DayInfo> day_info_map(const Paths& paths) {
  std::map<DayKey, DayInfo> info;
  for (const auto& day : io::read_dataset_csv_sidecar_only(paths.days_csv()))
    info[{day.patient_id, day.date_index}] = {day.split, day.label};
  return info;
}

struct FusionInputs {
  // per patient: all-split rows joined across the two pipelines
  struct PatientRows {
    std::vector<double> train_u_heart;   // forecast U_d on train days
    std::vector<double> train_v_time;    // multitask time-only variance
    std::vector<io::FusedScoreRow> scored;  // val+test, pre-fusion A scores
    std::vector<Split> splits;
    std::vector<int> labels;
  };
  std::map<std::string, PatientRows> patients;
};

inline FusionInputs collect_fusion_inputs(const Paths& paths,
                                          std::uint64_t seed) {
  const auto heart_path = paths.day_scores("forecast", seed);
  const auto sleep_path = paths.day_scores("multitask", seed);
  if (!fs::exists(heart_path))
    throw StageOrderError("missing " + heart_path.string() +
                          "; run `relapse score --pipeline forecast` first");
  if (!fs::exists(sleep_path))
    throw StageOrderError("missing " + sleep_path.string() +
                          "; run `relapse score --pipeline multitask` first");
  const auto info = day_info_map(paths);
  const auto heart_rows = io::read_day_scores_csv(heart_path);
  const auto sleep_rows = io::read_day_scores_csv(sleep_path);

  std::map<DayKey, const io::DayScoreRow*> heart_by_day, sleep_by_day;
  for (const auto& r : heart_rows) heart_by_day[{r.patient_id, r.date_index}] = &r;
  for (const auto& r : sleep_rows) sleep_by_day[{r.patient_id, r.date_index}] = &r;

  FusionInputs out;
  // healthy distributions come from training-day scores
  for (const auto& r : heart_rows) {
    const auto it = info.find({r.patient_id, r.date_index});
    if (it == info.end())
      throw DataError("score row without dataset day: " + r.patient_id + "/" +
                      std::to_string(r.date_index));
    if (counts_as_healthy(it->second))
      out.patients[r.patient_id].train_u_heart.push_back(r.u);
  }
  for (const auto& r : sleep_rows) {
    const auto it = info.find({r.patient_id, r.date_index});
    if (it == info.end())
      throw DataError("score row without dataset day: " + r.patient_id + "/" +
                      std::to_string(r.date_index));
    if (counts_as_healthy(it->second))
      out.patients[r.patient_id].train_v_time.push_back(
          r.v_time.value_or(r.u));
  }

  // normalized anomaly scores for every non-train day seen by either pipeline
  for (const auto& [key, day] : info) {
    if (day.split == Split::kTrain) continue;
    const auto hit = heart_by_day.find(key);
    const auto sit = sleep_by_day.find(key);
    if (hit == heart_by_day.end() && sit == sleep_by_day.end()) continue;
    auto& p = out.patients[key.first];
    io::FusedScoreRow row;
    row.patient_id = key.first;
    row.date_index = key.second;
    row.a_heart = hit != heart_by_day.end() ? hit->second->u
                                            : std::nan("");
    row.a_sleep = sit != sleep_by_day.end() ? sit->second->u : std::nan("");
    p.scored.push_back(row);
    p.splits.push_back(day.split);
    p.labels.push_back(day.label == DayLabel::kRelapse ? 1 : 0);
  }
  return out;
}

inline void run_fuse(const ExperimentConfig& cfg) {
  Paths paths(cfg);
  const auto mode = fusion_mode_from_string(cfg.fusion_mode);
  for (const std::uint64_t seed : cfg.seeds) {
    auto inputs = collect_fusion_inputs(paths, seed);

    // per-patient normalization to anomaly scores
    for (auto& [pid, p] : inputs.patients) {
      const auto dist_heart = fit_healthy(p.train_u_heart, true);
      const auto dist_sleep = fit_healthy(p.train_v_time, true);
      if (dist_heart.degenerate() || dist_sleep.degenerate())
        std::cerr << "[fuse] " << pid
                  << ": degenerate healthy distribution; clamped fallback in "
                     "effect\n";
      for (auto& row : p.scored) {
        if (!std::isnan(row.a_heart))
          row.a_heart = anomaly_score(row.a_heart, dist_heart);
        if (!std::isnan(row.a_sleep))
          row.a_sleep = anomaly_score(row.a_sleep, dist_sleep);
      }
    }

    double alpha = cfg.fusion_alpha;
    double tau = cfg.tau_fused;
    if (cfg.grid_search && mode == FusionMode::kWeighted) {
      std::vector<PatientScorePairs> val;
      for (auto& [pid, p] : inputs.patients) {
        PatientScorePairs pairs;
        pairs.patient_id = pid;
        for (std::size_t i = 0; i < p.scored.size(); ++i) {
          if (p.splits[i] != Split::kVal) continue;
          if (std::isnan(p.scored[i].a_heart) || std::isnan(p.scored[i].a_sleep))
            continue;
          pairs.a_heart.push_back(p.scored[i].a_heart);
          pairs.a_sleep.push_back(p.scored[i].a_sleep);
          pairs.labels.push_back(p.labels[i]);
        }
        if (!pairs.labels.empty()) val.push_back(std::move(pairs));
      }
      std::vector<double> alpha_grid, tau_grid;
      for (int i = 0; i <= 10; ++i) alpha_grid.push_back(i / 10.0);
      for (int i = -5; i <= 5; ++i) tau_grid.push_back(i / 10.0);
      const auto best = grid_search_alpha(val, alpha_grid, tau_grid);
      alpha = best.alpha;
      tau = best.tau;
      std::cerr << "[fuse] seed " << seed << ": grid search picked alpha="
                << alpha << " tau=" << tau << " (val AVG " << best.best_avg
                << ")\n";
    }

    std::vector<io::FusedScoreRow> rows;
    for (auto& [pid, p] : inputs.patients) {
      for (auto& row : p.scored) {
        const bool heart_ok = !std::isnan(row.a_heart);
        const bool sleep_ok = !std::isnan(row.a_sleep);
        if (heart_ok && sleep_ok) {
          row.fused = fuse(row.a_heart, row.a_sleep, mode, alpha);
        } else {
          row.fused = heart_ok ? row.a_heart : row.a_sleep;
          std::cerr << "[fuse] " << pid << "/" << row.date_index
                    << ": single-pipeline day, score passes through\n";
        }
        row.decision = classify(row.fused, tau);
        rows.push_back(row);
      }
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return std::tie(a.patient_id, a.date_index) <
             std::tie(b.patient_id, b.date_index);
    });
    io::write_fused_csv(paths.fused(seed), rows);
    detail::write_meta(paths.fused(seed), cfg, seed);
    std::cerr << "[fuse] seed " << seed << ": " << rows.size()
              << " fused day scores\n";
  }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct SplitMetrics {
  EvalResult heart;
  EvalResult sleep;
  EvalResult fused;
  MetricTriple heart_pooled;
  MetricTriple sleep_pooled;
  MetricTriple fused_pooled;
};

inline json eval_result_to_json(const EvalResult& r) {
  json per_patient = json::array();
  for (const auto& p : r.per_patient) {
    json row;
    row["patient_id"] = p.patient_id;
    if (p.metrics.auroc) row["auroc"] = *p.metrics.auroc;
    if (p.metrics.auprc) row["auprc"] = *p.metrics.auprc;
    if (p.metrics.avg()) row["avg"] = *p.metrics.avg();
    per_patient.push_back(std::move(row));
  }
  json j;
  j["per_patient"] = std::move(per_patient);
  if (r.aggregate.auroc) j["auroc"] = *r.aggregate.auroc;
  if (r.aggregate.auprc) j["auprc"] = *r.aggregate.auprc;
  if (r.aggregate.avg()) j["avg"] = *r.aggregate.avg();
  return j;
}

// Metrics for one seed on one split, for both single pipelines and fusion.
inline SplitMetrics evaluate_seed_split(const Paths& paths,
                                        std::uint64_t seed, Split split) {
  const auto fused_path = paths.fused(seed);
  if (!fs::exists(fused_path))
    throw StageOrderError("missing " + fused_path.string() +
                          "; run `relapse fuse` first");
  const auto info = day_info_map(paths);
  const auto rows = io::read_fused_csv(fused_path);

  std::map<std::string, PatientDayScores> heart, sleep, fused;
  for (const auto& r : rows) {
    const auto it = info.find({r.patient_id, r.date_index});
    if (it == info.end() || it->second.split != split) continue;
    const int label = it->second.label == DayLabel::kRelapse ? 1 : 0;
    auto push = [&](std::map<std::string, PatientDayScores>& dest, double v) {
      if (std::isnan(v)) return;
      auto& p = dest[r.patient_id];
      p.patient_id = r.patient_id;
      p.scores.push_back(v);
      p.labels.push_back(label);
    };
    push(heart, r.a_heart);
    push(sleep, r.a_sleep);
    push(fused, r.fused);
  }
  auto to_vec = [](std::map<std::string, PatientDayScores>& m) {
    std::vector<PatientDayScores> v;
    for (auto& [id, p] : m) v.push_back(std::move(p));
    return v;
  };
  SplitMetrics out;
  auto hv = to_vec(heart);
  auto sv = to_vec(sleep);
  auto fv = to_vec(fused);
  out.heart = evaluate_patients(hv);
  out.sleep = evaluate_patients(sv);
  out.fused = evaluate_patients(fv);
  out.heart_pooled = evaluate_pooled(hv);
  out.sleep_pooled = evaluate_pooled(sv);
  out.fused_pooled = evaluate_pooled(fv);
  return out;
}

inline json run_eval(const ExperimentConfig& cfg) {
  Paths paths(cfg);
  json result;
  result["config"] = to_json(cfg);
  result["config_hash"] = config_hash(cfg);

  for (const Split split : {Split::kVal, Split::kTest}) {
    json seeds_json = json::array();
    std::map<std::string, std::vector<double>> agg;  // metric -> per-seed
    for (const std::uint64_t seed : cfg.seeds) {
      const auto m = evaluate_seed_split(paths, seed, split);
      json row;
      row["seed"] = seed;
      row["forecast"] = eval_result_to_json(m.heart);
      row["multitask"] = eval_result_to_json(m.sleep);
      row["fused"] = eval_result_to_json(m.fused);
      auto pooled_json = [](const MetricTriple& t) {
        json p;
        if (t.auroc) p["auroc"] = *t.auroc;
        if (t.auprc) p["auprc"] = *t.auprc;
        if (t.avg()) p["avg"] = *t.avg();
        return p;
      };
      row["forecast"]["pooled"] = pooled_json(m.heart_pooled);
      row["multitask"]["pooled"] = pooled_json(m.sleep_pooled);
      row["fused"]["pooled"] = pooled_json(m.fused_pooled);
      seeds_json.push_back(std::move(row));
      auto collect = [&](const char* name, const EvalResult& r) {
        if (r.aggregate.auroc) agg[std::string(name) + ".auroc"].push_back(*r.aggregate.auroc);
        if (r.aggregate.auprc) agg[std::string(name) + ".auprc"].push_back(*r.aggregate.auprc);
        if (r.aggregate.avg()) agg[std::string(name) + ".avg"].push_back(*r.aggregate.avg());
      };
      collect("forecast", m.heart);
      collect("multitask", m.sleep);
      collect("fused", m.fused);
    }
    json summary;
    for (const auto& [metric, values] : agg) {
      const auto s = summarize_seeds(values);
      summary[metric] = {{"mean", s.mean}, {"std", s.stddev}};
    }
    json split_json;
    split_json["per_seed"] = std::move(seeds_json);
    split_json["summary"] = std::move(summary);
    result[to_string(split)] = std::move(split_json);
  }
  auto out = io::open_out(paths.metrics_json());
  out << result.dump(1) << '\n';
  std::cerr << "[eval] wrote " << paths.metrics_json().string() << "\n";
  return result;
}

}  // namespace relapse
