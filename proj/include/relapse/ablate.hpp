#pragma once

#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "relapse/pipeline.hpp"

// Ablation sweeps along one axis with everything else at config defaults,
// and the report renderer. Tables land as CSV plus pretty text on stderr.

namespace relapse {

struct AblationRow {
  std::string pipeline;  // forecast | multitask | fused
  std::string value;     // swept value
  double auroc = 0.0, auprc = 0.0, avg = 0.0;
  double auroc_std = 0.0, auprc_std = 0.0, avg_std = 0.0;
};

namespace detail {

// mean +/- std over seeds of the test-split aggregate metrics
inline std::vector<AblationRow> metric_rows(const ExperimentConfig& cfg,
                                            const std::string& value) {
  Paths paths(cfg);
  std::map<std::string, std::vector<double>> acc;
  for (const std::uint64_t seed : cfg.seeds) {
    const auto m = evaluate_seed_split(paths, seed, Split::kTest);
    auto push = [&](const char* name, const EvalResult& r) {
      acc[std::string(name) + ".auroc"].push_back(r.aggregate.auroc.value_or(0.5));
      acc[std::string(name) + ".auprc"].push_back(r.aggregate.auprc.value_or(0.0));
      acc[std::string(name) + ".avg"].push_back(r.aggregate.avg().value_or(0.25));
    };
    push("forecast", m.heart);
    push("multitask", m.sleep);
    push("fused", m.fused);
  }
  std::vector<AblationRow> rows;
  for (const char* pipeline : {"forecast", "multitask", "fused"}) {
    AblationRow row;
    row.pipeline = pipeline;
    row.value = value;
    const auto roc = summarize_seeds(acc[std::string(pipeline) + ".auroc"]);
    const auto prc = summarize_seeds(acc[std::string(pipeline) + ".auprc"]);
    const auto avg = summarize_seeds(acc[std::string(pipeline) + ".avg"]);
    row.auroc = roc.mean;
    row.auroc_std = roc.stddev;
    row.auprc = prc.mean;
    row.auprc_std = prc.stddev;
    row.avg = avg.mean;
    row.avg_std = avg.stddev;
    rows.push_back(std::move(row));
  }
  return rows;
}

// full synth->train->score->fuse cycle under a sub-directory
inline std::vector<AblationRow> run_cell(ExperimentConfig cfg,
                                         const fs::path& cell_dir,
                                         const std::string& value) {
  cfg.output_dir = cell_dir.string();
  run_synth(cfg);
  run_train(cfg, "forecast");
  run_train(cfg, "multitask");
  run_score(cfg, "forecast");
  run_score(cfg, "multitask");
  run_fuse(cfg);
  return metric_rows(cfg, value);
}

inline void write_ablation_csv(const fs::path& path,
                               const std::string& axis,
                               const std::vector<AblationRow>& rows) {
  auto out = io::open_out(path);
  out << "pipeline," << axis << ",auroc,auroc_std,auprc,auprc_std,avg,avg_std\n";
  for (const auto& r : rows)
    out << r.pipeline << ',' << r.value << ',' << io::fmt_double(r.auroc)
        << ',' << io::fmt_double(r.auroc_std) << ',' << io::fmt_double(r.auprc)
        << ',' << io::fmt_double(r.auprc_std) << ',' << io::fmt_double(r.avg)
        << ',' << io::fmt_double(r.avg_std) << '\n';
}

inline void print_ablation_table(const std::string& axis,
                                 const std::vector<AblationRow>& rows) {
  std::cerr << "\n  " << std::left << std::setw(10) << "pipeline"
            << std::setw(12) << axis << std::setw(16) << "AUROC"
            << std::setw(16) << "AUPRC" << std::setw(16) << "AVG" << "\n";
  for (const auto& r : rows) {
    std::ostringstream roc, prc, avg;
    roc << std::fixed << std::setprecision(3) << r.auroc << " +/- "
        << r.auroc_std;
    prc << std::fixed << std::setprecision(3) << r.auprc << " +/- "
        << r.auprc_std;
    avg << std::fixed << std::setprecision(3) << r.avg << " +/- " << r.avg_std;
    std::cerr << "  " << std::left << std::setw(10) << r.pipeline
              << std::setw(12) << r.value << std::setw(16) << roc.str()
              << std::setw(16) << prc.str() << std::setw(16) << avg.str()
              << "\n";
  }
  std::cerr << "\n";
}

}  // namespace detail

// Sweeps: posenc {sinusoidal,rope,alibi}, stride {12,24,36,48}, window
// {12,24,36,48} (retraining per cell); tau and alpha re-use existing scores.
inline std::vector<AblationRow> run_ablate(const ExperimentConfig& cfg,
                                           const std::string& axis) {
  Paths paths(cfg);
  std::vector<AblationRow> rows;

  if (axis == "posenc") {
    for (const std::string mode : {"sinusoidal", "rope", "alibi"}) {
      ExperimentConfig cell = cfg;
      cell.posenc_forecast = mode;
      cell.posenc_multitask = mode;
      auto r = detail::run_cell(cell, paths.root / "ablate" / axis / mode, mode);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  } else if (axis == "stride") {
    for (const int stride : {12, 24, 36, 48}) {
      ExperimentConfig cell = cfg;
      cell.stride_forecast = stride;
      cell.stride_multitask = stride;
      auto r = detail::run_cell(
          cell, paths.root / "ablate" / axis / std::to_string(stride),
          std::to_string(stride));
      rows.insert(rows.end(), r.begin(), r.end());
    }
  } else if (axis == "window") {
    for (const int window : {12, 24, 36, 48}) {
      ExperimentConfig cell = cfg;
      cell.window_size = window;
      auto r = detail::run_cell(
          cell, paths.root / "ablate" / axis / std::to_string(window),
          std::to_string(window));
      rows.insert(rows.end(), r.begin(), r.end());
    }
  } else if (axis == "tau") {
    // decision-quality sweep on the validation split; ranking metrics do
    // not move with tau, so report the confusion-based ones
    const auto info = day_info_map(paths);
    auto out = io::open_out(paths.ablate_csv(axis));
    out << "tau,seed,precision,recall,f1,accuracy\n";
    for (int t = -5; t <= 5; ++t) {
      const double tau = t / 10.0;
      for (const std::uint64_t seed : cfg.seeds) {
        const auto fused_path = paths.fused(seed);
        if (!fs::exists(fused_path))
          throw StageOrderError("missing " + fused_path.string() +
                                "; run `relapse fuse` first");
        std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (const auto& r : io::read_fused_csv(fused_path)) {
          const auto it = info.find({r.patient_id, r.date_index});
          if (it == info.end() || it->second.split != Split::kVal) continue;
          const int label = it->second.label == DayLabel::kRelapse ? 1 : 0;
          const int pred = classify(r.fused, tau);
          tp += pred && label;
          fp += pred && !label;
          fn += !pred && label;
          tn += !pred && !label;
        }
        const double precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
        const double recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
        const double f1 = precision + recall > 0
                              ? 2 * precision * recall / (precision + recall)
                              : 0.0;
        const double accuracy = double(tp + tn) / double(tp + fp + fn + tn);
        out << io::fmt_double(tau) << ',' << seed << ','
            << io::fmt_double(precision) << ',' << io::fmt_double(recall)
            << ',' << io::fmt_double(f1) << ',' << io::fmt_double(accuracy)
            << '\n';
      }
    }
    detail::write_meta(paths.ablate_csv(axis), cfg, std::nullopt);
    std::cerr << "[ablate] wrote " << paths.ablate_csv(axis).string() << "\n";
    return rows;
  } else if (axis == "alpha") {
    // weighted-fusion sweep on existing anomaly scores
    auto out = io::open_out(paths.ablate_csv(axis));
    out << "alpha,seed,auroc,auprc,avg\n";
    const auto info = day_info_map(paths);
    for (int a = 0; a <= 10; ++a) {
      const double alpha = a / 10.0;
      for (const std::uint64_t seed : cfg.seeds) {
        const auto fused_path = paths.fused(seed);
        if (!fs::exists(fused_path))
          throw StageOrderError("missing " + fused_path.string() +
                                "; run `relapse fuse` first");
        std::map<std::string, PatientDayScores> per_patient;
        for (const auto& r : io::read_fused_csv(fused_path)) {
          const auto it = info.find({r.patient_id, r.date_index});
          if (it == info.end() || it->second.split != Split::kTest) continue;
          if (std::isnan(r.a_heart) || std::isnan(r.a_sleep)) continue;
          auto& p = per_patient[r.patient_id];
          p.patient_id = r.patient_id;
          p.scores.push_back(fuse(r.a_heart, r.a_sleep, FusionMode::kWeighted,
                                  alpha));
          p.labels.push_back(it->second.label == DayLabel::kRelapse ? 1 : 0);
        }
        std::vector<PatientDayScores> v;
        for (auto& [id, p] : per_patient) v.push_back(std::move(p));
        const auto eval = evaluate_patients(v);
        out << io::fmt_double(alpha) << ',' << seed << ','
            << io::fmt_double(eval.aggregate.auroc.value_or(0.0)) << ','
            << io::fmt_double(eval.aggregate.auprc.value_or(0.0)) << ','
            << io::fmt_double(eval.aggregate.avg().value_or(0.0)) << '\n';
      }
    }
    detail::write_meta(paths.ablate_csv(axis), cfg, std::nullopt);
    std::cerr << "[ablate] wrote " << paths.ablate_csv(axis).string() << "\n";
    return rows;
  } else {
    throw std::invalid_argument(
        "unknown ablation axis '" + axis +
        "' (expected posenc|stride|window|tau|alpha)");
  }

  detail::write_ablation_csv(paths.ablate_csv(axis), axis, rows);
  detail::write_meta(paths.ablate_csv(axis), cfg, std::nullopt);
  detail::print_ablation_table(axis, rows);
  std::cerr << "[ablate] wrote " << paths.ablate_csv(axis).string() << "\n";
  return rows;
}

// Aggregate tables and the per-patient breakdown, rendered from the
// metrics JSON for external plotting.
inline void run_report(const ExperimentConfig& cfg) {
  Paths paths(cfg);
  if (!fs::exists(paths.metrics_json()))
    throw StageOrderError("missing " + paths.metrics_json().string() +
                          "; run `relapse eval` first");
  json metrics;
  {
    auto in = io::open_in(paths.metrics_json());
    in >> metrics;
  }
  {
    auto out = io::open_out(paths.report_csv("aggregate"));
    out << "split,pipeline,metric,mean,std\n";
    for (const char* split : {"val", "test"}) {
      const auto& summary = metrics.at(split).at("summary");
      for (const auto& [key, value] : summary.items()) {
        const auto dot = key.find('.');
        out << split << ',' << key.substr(0, dot) << ',' << key.substr(dot + 1)
            << ',' << io::fmt_double(value.at("mean").get<double>()) << ','
            << io::fmt_double(value.at("std").get<double>()) << '\n';
      }
    }
  }
  {
    // per-patient rows per seed (patient-wise comparison source data)
    auto out = io::open_out(paths.report_csv("per_patient"));
    out << "split,seed,pipeline,patient_id,auroc,auprc,avg\n";
    for (const char* split : {"val", "test"}) {
      for (const auto& seed_row : metrics.at(split).at("per_seed")) {
        for (const char* pipeline : {"forecast", "multitask", "fused"}) {
          for (const auto& p : seed_row.at(pipeline).at("per_patient")) {
            out << split << ',' << seed_row.at("seed").get<std::uint64_t>()
                << ',' << pipeline << ','
                << p.at("patient_id").get<std::string>() << ','
                << (p.contains("auroc") ? io::fmt_double(p.at("auroc").get<double>()) : "")
                << ','
                << (p.contains("auprc") ? io::fmt_double(p.at("auprc").get<double>()) : "")
                << ','
                << (p.contains("avg") ? io::fmt_double(p.at("avg").get<double>()) : "")
                << '\n';
          }
        }
      }
    }
  }
  detail::write_meta(paths.report_csv("aggregate"), cfg, std::nullopt);
  detail::write_meta(paths.report_csv("per_patient"), cfg, std::nullopt);
  std::cerr << "[report] wrote " << paths.report_csv("aggregate").string()
            << " and " << paths.report_csv("per_patient").string() << "\n";
}

}  // namespace relapse
