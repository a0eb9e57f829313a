#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>
#include <vector>

#include "relapse/rng.hpp"
#include "relapse/scoring.hpp"

using namespace relapse;

namespace {

// oracle: all-pairs concordance counting, ties worth 1/2
double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      ++pairs;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

// oracle: explicit sweep over every distinct score threshold, recomputing
// precision/recall from scratch at each operating point
double auprc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<double>> thresholds(s.begin(), s.end());
  std::size_t n_pos = 0;
  for (int l : y) n_pos += l ? 1 : 0;
  double area = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= th) {
        if (y[i]) ++tp;
        else ++fp;
      }
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision =
        static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

}  // namespace

TEST_CASE("healthy distribution fitting") {
  SECTION("min/max/mean of a small sample") {
    std::vector<double> s = {0.2, 0.4, 0.6};
    auto d = fit_healthy(s);
    CHECK(d.min_v == 0.2);
    CHECK(d.max_v == 0.6);
    CHECK(d.mean_v == Catch::Approx(0.4));
  }
  SECTION("single repeated value is degenerate") {
    std::vector<double> s = {0.3, 0.3, 0.3};
    CHECK_THROWS_AS(fit_healthy(s), std::domain_error);
    auto d = fit_healthy(s, /*allow_degenerate=*/true);
    CHECK(d.degenerate());
  }
  SECTION("fewer than two days is an error") {
    std::vector<double> s = {0.3};
    CHECK_THROWS_AS(fit_healthy(s), std::invalid_argument);
  }
  SECTION("200 random training days match a direct scan") {
    Rng rng(404);
    std::vector<double> s(200);
    for (auto& v : s) v = rng.uniform(0.0, 3.0);
    auto d = fit_healthy(s);
    double lo = s[0], hi = s[0], sum = 0.0;
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    CHECK(d.min_v == lo);
    CHECK(d.max_v == hi);
    CHECK(std::abs(d.mean_v - sum / 200.0) < 1e-12);
  }
}

TEST_CASE("anomaly normalization") {
  HealthyDistribution d{0.2, 0.6, 0.4};
  CHECK(anomaly_score(0.4, d) == 0.0);
  CHECK(anomaly_score(0.6, d) == Catch::Approx(0.5));   // (0.6-0.4)/0.4
  CHECK(anomaly_score(0.2, d) == Catch::Approx(-0.5));
  SECTION("unbounded outside the training range") {
    CHECK(anomaly_score(1.4, d) == Catch::Approx(2.5));
  }
  SECTION("degenerate fallback clamps to +/-1e6") {
    HealthyDistribution g{0.5, 0.5, 0.5};
    CHECK(anomaly_score(0.5, g) == 0.0);
    CHECK(anomaly_score(0.6, g) == 1e6);
    CHECK(anomaly_score(0.4, g) == -1e6);
  }
}

TEST_CASE("classification threshold is strict") {
  CHECK(classify(0.5, -0.1) == 1);
  CHECK(classify(-0.1, -0.1) == 0);  // A == tau -> 0
  CHECK(classify(-0.15, -0.2) == 1);
  SECTION("decisions survive a common shift of score and threshold") {
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
      const double a = rng.uniform(-1.0, 1.0);
      const double tau = rng.uniform(-0.5, 0.5);
      const double c = rng.uniform(-10.0, 10.0);
      CHECK(classify(a, tau) == classify(a + c, tau + c));
    }
  }
}

TEST_CASE("late fusion") {
  CHECK(fuse(1.0, 0.0, FusionMode::kWeighted, 0.7) == Catch::Approx(0.7));
  CHECK(fuse(0.33, 0.9, FusionMode::kWeighted, 1.0) == 0.33);  // identity
  CHECK(fuse(0.2, 0.5, FusionMode::kMax) == 0.5);
  CHECK(fuse(0.2, 0.5, FusionMode::kMin) == 0.2);
  CHECK_THROWS_AS(fuse(0.1, 0.1, FusionMode::kWeighted, 1.5),
                  std::invalid_argument);

  SECTION("min <= weighted <= max pointwise on random pairs") {
    Rng rng(2712);
    for (int t = 0; t < 1000; ++t) {
      const double a = rng.uniform(-3.0, 3.0);
      const double b = rng.uniform(-3.0, 3.0);
      for (int g = 0; g <= 10; ++g) {
        const double alpha = g / 10.0;
        const double w = fuse(a, b, FusionMode::kWeighted, alpha);
        CHECK(fuse(a, b, FusionMode::kMin) <= w);
        CHECK(w <= fuse(a, b, FusionMode::kMax));
      }
    }
  }
  SECTION("weighted fusion is monotone in each input") {
    CHECK(fuse(0.5, 0.2, FusionMode::kWeighted, 0.6) <
          fuse(0.7, 0.2, FusionMode::kWeighted, 0.6));
    CHECK(fuse(0.5, 0.2, FusionMode::kWeighted, 0.6) <
          fuse(0.5, 0.4, FusionMode::kWeighted, 0.6));
  }
}

TEST_CASE("ranking metrics") {
  SECTION("perfect ranking") {
    std::vector<double> s = {0.9, 0.1};
    std::vector<int> y = {1, 0};
    CHECK(*auroc(s, y) == 1.0);
    CHECK(*auprc(s, y) == 1.0);
  }
  SECTION("all scores tied") {
    std::vector<double> s = {0.5, 0.5};
    std::vector<int> y = {1, 0};
    CHECK(*auroc(s, y) == 0.5);
  }
  SECTION("single class comes back absent") {
    std::vector<double> s = {0.5, 0.7};
    std::vector<int> pos = {1, 1}, neg = {0, 0};
    CHECK_FALSE(auroc(s, pos).has_value());
    CHECK_FALSE(auroc(s, neg).has_value());
    CHECK_FALSE(auprc(s, neg).has_value());
    CHECK(auprc(s, pos).has_value());  // positives exist
  }
  SECTION("12 random pairs match the oracles exactly") {
    Rng rng(99);
    std::vector<double> s(12);
    std::vector<int> y(12);
    for (auto& v : s) v = rng.uniform(0.0, 1.0);
    for (auto& l : y) l = rng.uniform() < 0.4 ? 1 : 0;
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(*auroc(s, y) - auroc_oracle(s, y)) < 1e-12);
    CHECK(std::abs(*auprc(s, y) - auprc_oracle(s, y)) < 1e-12);
  }
  SECTION("50 random instances with ties and single positives") {
    Rng rng(1717);
    for (int inst = 0; inst < 50; ++inst) {
      const std::size_t n = 2 + rng.uniform_int(99);
      std::vector<double> s(n);
      std::vector<int> y(n, 0);
      // quantized scores force ties
      const int levels = 2 + static_cast<int>(rng.uniform_int(12));
      for (auto& v : s)
        v = static_cast<double>(rng.uniform_int(levels)) / levels;
      if (inst % 7 == 0) {
        y[rng.uniform_int(n)] = 1;  // single positive
      } else {
        for (auto& l : y) l = rng.uniform() < 0.35 ? 1 : 0;
      }
      std::size_t n_pos = 0;
      for (int l : y) n_pos += l;
      if (n_pos == 0) y[0] = 1;

      const auto prc = auprc(s, y);
      REQUIRE(prc.has_value());
      CHECK(std::abs(*prc - auprc_oracle(s, y)) < 1e-12);
      if (n_pos < n) {
        const auto roc = auroc(s, y);
        REQUIRE(roc.has_value());
        CHECK(std::abs(*roc - auroc_oracle(s, y)) < 1e-12);
      }
    }
  }
}

TEST_CASE("metrics are invariant under the anomaly normalization") {
  Rng rng(12);
  std::vector<double> u(40);
  std::vector<int> y(40);
  for (auto& v : u) v = rng.uniform(0.0, 2.0);
  for (auto& l : y) l = rng.uniform() < 0.3 ? 1 : 0;
  y[0] = 1;
  y[1] = 0;
  HealthyDistribution d{0.1, 1.7, 0.8};
  std::vector<double> a(40);
  for (std::size_t i = 0; i < u.size(); ++i) a[i] = anomaly_score(u[i], d);
  CHECK(std::abs(*auroc(u, y) - *auroc(a, y)) < 1e-12);
  CHECK(std::abs(*auprc(u, y) - *auprc(a, y)) < 1e-12);

  SECTION("and under any strictly increasing transform") {
    std::vector<double> t(40);
    for (std::size_t i = 0; i < u.size(); ++i) t[i] = std::exp(2.0 * u[i]) - 3.0;
    CHECK(std::abs(*auroc(u, y) - *auroc(t, y)) < 1e-12);
    CHECK(std::abs(*auprc(u, y) - *auprc(t, y)) < 1e-12);
  }
}

TEST_CASE("per-patient evaluation aggregates by unweighted mean") {
  SECTION("two patients at 1.0 and 0.5 average to 0.75") {
    std::vector<PatientDayScores> ps(2);
    ps[0] = {"p1", {0.9, 0.1}, {1, 0}};          // AUROC 1.0
    ps[1] = {"p2", {0.5, 0.5, 0.5}, {1, 0, 0}};  // AUROC 0.5
    auto eval = evaluate_patients(ps);
    CHECK(*eval.aggregate.auroc == Catch::Approx(0.75));
  }
  SECTION("three-patient fixture matches hand arithmetic") {
    std::vector<PatientDayScores> ps(3);
    ps[0] = {"a", {0.9, 0.8, 0.1}, {1, 1, 0}};  // perfect: roc 1, prc 1
    ps[1] = {"b", {0.1, 0.9}, {1, 0}};          // inverted: roc 0, prc 0.5
    ps[2] = {"c", {0.6, 0.6}, {1, 0}};          // ties: roc 0.5, prc 0.5
    auto eval = evaluate_patients(ps);
    CHECK(*eval.aggregate.auroc == Catch::Approx((1.0 + 0.0 + 0.5) / 3.0));
    CHECK(*eval.aggregate.auprc == Catch::Approx((1.0 + 0.5 + 0.5) / 3.0));
    CHECK(*eval.aggregate.avg() ==
          Catch::Approx(((1.0 + 0.0 + 0.5) / 3.0 + (1.0 + 0.5 + 0.5) / 3.0) / 2.0));
  }
  SECTION("single-class patients are absent and excluded") {
    std::vector<PatientDayScores> ps(2);
    ps[0] = {"p1", {0.9, 0.1}, {1, 0}};
    ps[1] = {"p2", {0.5, 0.6}, {0, 0}};  // no positives
    auto eval = evaluate_patients(ps);
    CHECK_FALSE(eval.per_patient[1].metrics.auroc.has_value());
    CHECK(*eval.aggregate.auroc == 1.0);  // only p1 counts
  }
}

TEST_CASE("seed summary uses population std") {
  std::vector<double> one = {0.7};
  auto s = summarize_seeds(one);
  CHECK(s.mean == 0.7);
  CHECK(s.stddev == 0.0);
  std::vector<double> three = {0.5, 0.7, 0.9};
  s = summarize_seeds(three);
  CHECK(s.mean == Catch::Approx(0.7));
  CHECK(s.stddev == Catch::Approx(std::sqrt(0.08 / 3.0)));
}

TEST_CASE("fusion weight grid search") {
  const std::vector<double> alpha_grid = {0.0, 0.5, 1.0};
  const std::vector<double> tau_grid = {-0.2, -0.1, 0.0};

  SECTION("a perfectly separating pipeline pulls alpha to its endpoint") {
    std::vector<PatientScorePairs> val(1);
    val[0].patient_id = "p";
    Rng rng(5);
    for (int i = 0; i < 30; ++i) {
      const int label = i % 3 == 0 ? 1 : 0;
      val[0].labels.push_back(label);
      // a narrow but perfect margin: any dilution by noise breaks it
      val[0].a_heart.push_back(label ? 0.1 + 0.001 * i : -0.1 - 0.001 * i);
      val[0].a_sleep.push_back(rng.uniform(-1.0, 1.0));  // uninformative
    }
    auto best = grid_search_alpha(val, alpha_grid, tau_grid);
    CHECK(best.alpha == 1.0);  // all weight on the separating pipeline
  }
  SECTION("identical pipelines tie; smallest alpha and |tau| win") {
    std::vector<PatientScorePairs> val(1);
    val[0].patient_id = "p";
    for (int i = 0; i < 20; ++i) {
      const int label = i % 4 == 0 ? 1 : 0;
      val[0].labels.push_back(label);
      const double s = label ? 0.8 : -0.3;
      val[0].a_heart.push_back(s);
      val[0].a_sleep.push_back(s);
    }
    auto best = grid_search_alpha(val, alpha_grid, tau_grid);
    CHECK(best.alpha == 0.0);
    CHECK(best.tau == 0.0);
  }
  SECTION("exhaustive evaluation matches an independent scan") {
    std::vector<PatientScorePairs> val(2);
    Rng rng(31337);
    for (auto& p : val) {
      p.patient_id = "p";
      for (int i = 0; i < 25; ++i) {
        const int label = rng.uniform() < 0.3 ? 1 : 0;
        p.labels.push_back(label);
        p.a_heart.push_back(rng.uniform(-1.0, 1.0) + 0.8 * label);
        p.a_sleep.push_back(rng.uniform(-1.0, 1.0) + 0.4 * label);
      }
      p.labels[0] = 1;
      p.labels[1] = 0;
    }
    auto best = grid_search_alpha(val, alpha_grid, tau_grid);

    // independent scan
    double scan_best = -1.0, scan_alpha = -1.0;
    for (double alpha : alpha_grid) {
      std::vector<PatientDayScores> fused(val.size());
      for (std::size_t p = 0; p < val.size(); ++p) {
        fused[p].patient_id = val[p].patient_id;
        fused[p].labels = val[p].labels;
        for (std::size_t i = 0; i < val[p].a_heart.size(); ++i)
          fused[p].scores.push_back(alpha * val[p].a_heart[i] +
                                    (1.0 - alpha) * val[p].a_sleep[i]);
      }
      auto ev = evaluate_patients(fused);
      const double avg = *ev.aggregate.avg();
      if (avg > scan_best) {
        scan_best = avg;
        scan_alpha = alpha;
      }
    }
    CHECK(best.alpha == scan_alpha);
    CHECK(best.best_avg == Catch::Approx(scan_best));
  }
  SECTION("single-label validation is rejected") {
    std::vector<PatientScorePairs> val(1);
    val[0] = {"p", {0.1, 0.2}, {0.0, 0.1}, {0, 0}};
    CHECK_THROWS_AS(grid_search_alpha(val, alpha_grid, tau_grid),
                    std::invalid_argument);
  }
}
