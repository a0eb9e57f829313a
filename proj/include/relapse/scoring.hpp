#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Healthy-distribution fitting, anomaly normalization, thresholded
// decisions, late score fusion and the AUROC/AUPRC/AVG ranking metrics.

namespace relapse {

struct HealthyDistribution {
  double min_v = 0.0;
  double max_v = 0.0;
  double mean_v = 0.0;

  bool degenerate() const { return max_v == min_v; }
};

inline constexpr double kDegenerateAnomalyClamp = 1e6;

// Empirical min/max/mean of the training-day scores.
inline HealthyDistribution fit_healthy(std::span<const double> train_scores,
                                       bool allow_degenerate = false) {
  if (train_scores.size() < 2)
    throw std::invalid_argument("fit_healthy: need >= 2 scorable training days");
  HealthyDistribution d;
  d.min_v = d.max_v = train_scores[0];
  double sum = 0.0;
  for (double v : train_scores) {
    d.min_v = std::min(d.min_v, v);
    d.max_v = std::max(d.max_v, v);
    sum += v;
  }
  d.mean_v = sum / static_cast<double>(train_scores.size());
  if (d.degenerate() && !allow_degenerate)
    throw std::domain_error(
        "fit_healthy: degenerate distribution (max == min); pass "
        "allow_degenerate to opt into the clamped-anomaly fallback");
  return d;
}

// A_d = (U_d - mean) / (max - min). Degenerate distributions fall back to
// 0 at the mean and a +/-1e6 clamped surrogate elsewhere.
inline double anomaly_score(double day_score, const HealthyDistribution& d) {
  if (d.degenerate()) {
    if (day_score == d.mean_v) return 0.0;
    return day_score > d.mean_v ? kDegenerateAnomalyClamp
                                : -kDegenerateAnomalyClamp;
  }
  return (day_score - d.mean_v) / (d.max_v - d.min_v);
}

// 1 iff A_d > tau, strictly.
inline int classify(double anomaly, double tau) {
  return anomaly > tau ? 1 : 0;
}

enum class FusionMode { kWeighted, kMax, kMin };

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kWeighted: return "weighted";
    case FusionMode::kMax: return "max";
    case FusionMode::kMin: return "min";
  }
  return "?";
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "weighted") return FusionMode::kWeighted;
  if (s == "max") return FusionMode::kMax;
  if (s == "min") return FusionMode::kMin;
  throw std::invalid_argument("unknown fusion mode: '" + s +
                              "' (expected weighted|max|min)");
}

// Late fusion of the two continuous anomaly scores; thresholding happens
// only after fusion.
inline double fuse(double a_heart, double a_sleep, FusionMode mode,
                   double alpha = 0.7) {
  switch (mode) {
    case FusionMode::kWeighted:
      if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("fuse: alpha must lie in [0,1]");
      return alpha * a_heart + (1.0 - alpha) * a_sleep;
    case FusionMode::kMax: return std::max(a_heart, a_sleep);
    case FusionMode::kMin: return std::min(a_heart, a_sleep);
  }
  throw std::invalid_argument("fuse: bad mode");
}

// ---------------------------------------------------------------------------
// ranking metrics
// ---------------------------------------------------------------------------

// Pairwise concordance probability with ties counted 1/2, computed from
// tie-averaged ranks. Undefined (absent) when a class is missing.
inline std::optional<double> auroc(std::span<const double> scores,
                                   std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auroc: scores/labels size mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg_rank;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t t = 0; t < n; ++t)
    if (labels[t]) rank_sum_pos += rank[t];
  const double u = rank_sum_pos - static_cast<double>(n_pos) *
                                      (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Area under the precision-recall step curve: sum (R_i - R_{i-1}) * P_i over
// the descending sweep of distinct scores (no interpolation). Absent
// without positives.
inline std::optional<double> auprc(std::span<const double> scores,
                                   std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auprc: scores/labels size mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  if (n_pos == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, predicted = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;  // tie group shares one operating point
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) {
      ++predicted;
      tp += labels[order[t]] ? 1 : 0;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision =
        static_cast<double>(tp) / static_cast<double>(predicted);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return area;
}

struct MetricTriple {
  std::optional<double> auroc;
  std::optional<double> auprc;

  std::optional<double> avg() const {
    if (!auroc || !auprc) return std::nullopt;
    return (*auroc + *auprc) / 2.0;
  }
};

inline MetricTriple compute_metrics(std::span<const double> scores,
                                    std::span<const int> labels) {
  return {auroc(scores, labels), auprc(scores, labels)};
}

// ---------------------------------------------------------------------------
// per-patient evaluation
// ---------------------------------------------------------------------------

struct PatientDayScores {
  std::string patient_id;
  std::vector<double> scores;  // day-level, one per labeled day
  std::vector<int> labels;     // 1 = relapse
};

struct PatientMetrics {
  std::string patient_id;
  MetricTriple metrics;
};

struct EvalResult {
  std::vector<PatientMetrics> per_patient;
  // unweighted mean over patients whose metric is defined
  MetricTriple aggregate;
  int patients_scored = 0;
};

// pooled variant: all patients' day scores concatenated into one ranking
inline MetricTriple evaluate_pooled(std::span<const PatientDayScores> patients) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& p : patients) {
    scores.insert(scores.end(), p.scores.begin(), p.scores.end());
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  return compute_metrics(scores, labels);
}

inline EvalResult evaluate_patients(std::span<const PatientDayScores> patients) {
  EvalResult out;
  double sum_roc = 0.0, sum_prc = 0.0;
  int n_roc = 0, n_prc = 0;
  for (const auto& p : patients) {
    PatientMetrics pm;
    pm.patient_id = p.patient_id;
    pm.metrics = compute_metrics(p.scores, p.labels);
    if (pm.metrics.auroc) {
      sum_roc += *pm.metrics.auroc;
      ++n_roc;
    }
    if (pm.metrics.auprc) {
      sum_prc += *pm.metrics.auprc;
      ++n_prc;
    }
    out.per_patient.push_back(std::move(pm));
  }
  if (n_roc > 0) out.aggregate.auroc = sum_roc / n_roc;
  if (n_prc > 0) out.aggregate.auprc = sum_prc / n_prc;
  out.patients_scored = static_cast<int>(patients.size());
  return out;
}

// ---------------------------------------------------------------------------
// validation grid search for the fusion weight
// ---------------------------------------------------------------------------

struct FusionGridResult {
  double alpha = 0.7;
  double tau = 0.0;
  double best_avg = 0.0;
};

struct PatientScorePairs {
  std::string patient_id;
  std::vector<double> a_heart;
  std::vector<double> a_sleep;
  std::vector<int> labels;
};

// Exhaustive scan over (alpha, tau); the objective is the evaluate-style
// aggregate AVG of the weighted-fused scores, which does not depend on tau.
// Ties break toward smaller alpha, then smaller |tau|, then smaller tau.
inline FusionGridResult grid_search_alpha(
    std::span<const PatientScorePairs> validation,
    std::span<const double> alpha_grid, std::span<const double> tau_grid) {
  if (alpha_grid.empty() || tau_grid.empty())
    throw std::invalid_argument("grid_search_alpha: empty grid");
  bool any_pos = false, any_neg = false;
  for (const auto& p : validation)
    for (int l : p.labels) (l ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg)
    throw std::invalid_argument(
        "grid_search_alpha: validation needs both labels");

  FusionGridResult best;
  bool first = true;
  for (double alpha : alpha_grid) {
    std::vector<PatientDayScores> fused;
    fused.reserve(validation.size());
    for (const auto& p : validation) {
      PatientDayScores f;
      f.patient_id = p.patient_id;
      f.labels = p.labels;
      for (std::size_t i = 0; i < p.a_heart.size(); ++i)
        f.scores.push_back(
            fuse(p.a_heart[i], p.a_sleep[i], FusionMode::kWeighted, alpha));
      fused.push_back(std::move(f));
    }
    const auto eval = evaluate_patients(fused);
    const double avg = eval.aggregate.avg().value_or(0.0);
    for (double tau : tau_grid) {
      const bool better =
          first || avg > best.best_avg ||
          (avg == best.best_avg &&
           (alpha < best.alpha ||
            (alpha == best.alpha && (std::abs(tau) < std::abs(best.tau) ||
                                     (std::abs(tau) == std::abs(best.tau) &&
                                      tau < best.tau)))));
      if (better) {
        best = {alpha, tau, avg};
        first = false;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// multi-seed summary
// ---------------------------------------------------------------------------

struct SeedSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population: one seed -> 0
};

inline SeedSummary summarize_seeds(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize_seeds: empty");
  SeedSummary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

}  // namespace relapse
