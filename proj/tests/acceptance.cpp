// Acceptance suite: one test case per release criterion, each printing a
// PASS/FAIL line. The end-to-end case trains the full default-scale
// synthetic cohort and dominates the runtime.

#include <catch2/catch_amalgamated.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "relapse/ablate.hpp"
#include "relapse/pipeline.hpp"
#include "testing_util.hpp"

using namespace relapse;
namespace fs = std::filesystem;

namespace {

class CriterionReporter : public Catch::EventListenerBase {
 public:
  using Catch::EventListenerBase::EventListenerBase;
  void testCaseEnded(const Catch::TestCaseStats& stats) override {
    std::printf("[%s] %s\n",
                stats.totals.assertions.allOk() ? "PASS" : "FAIL",
                stats.testInfo->name.c_str());
    std::fflush(stdout);
  }
};
CATCH_REGISTER_LISTENER(CriterionReporter)

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("relapse_accept_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

TEST_CASE("criterion 1: window counts match the formula for random geometries") {
  const auto t0 = Clock::now();
  auto day = testutil::make_valid_day("p", 0);
  Rng rng(20260810);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 1 + static_cast<int>(rng.uniform_int(288));
    const int s = 1 + static_cast<int>(rng.uniform_int(96));
    const auto windows = make_windows(day, w, s);
    const int expected = (288 - w) / s + 1;
    REQUIRE(static_cast<int>(windows.size()) == expected);
    // after the documented target filter: drop starts with s+L beyond the day
    int expected_filtered = 0;
    for (int i = 0; i < expected; ++i)
      if (i * s + w < 288) ++expected_filtered;
    int filtered = 0;
    for (const auto& win : windows)
      if (win.has_cardiac_target()) ++filtered;
    REQUIRE(filtered == expected_filtered);
  }
  const double dt = seconds_since(t0);
  std::printf("  windowing: 20 geometries in %.3f s\n", dt);
  CHECK(dt < 1.0);
}

TEST_CASE("criterion 2: finite-difference gradient integrity") {
  const auto t0 = Clock::now();
  Rng rng(777);
  const int kTrials = 10;
  auto leaf = [&](ad::Shape shape) {
    auto t = ad::make_tensor<double>(std::move(shape), true);
    testutil::fill_uniform(t, rng);
    return t;
  };
  auto weight = [&](ad::Shape shape) {
    auto t = ad::make_tensor<double>(std::move(shape), false);
    testutil::fill_uniform(t, rng);
    return t;
  };

  for (int trial = 0; trial < kTrials; ++trial) {
    {  // elementwise ops + bias broadcast
      auto a = leaf({3, 4}), b = leaf({3, 4}), bias = leaf({4});
      auto w = weight({3, 4});
      auto res = testutil::check_gradients(
          [&] {
            auto e = ad::add_bias(ad::sub(ad::add(a, b), ad::scale(ad::mul(a, b), 0.3)), bias);
            return ad::sum_all(ad::mul(e, w));
          },
          {a, b, bias});
      INFO(res.where);
      REQUIRE(res.ok);
    }
    {  // matmul
      auto a = leaf({4, 6}), b = leaf({6, 3});
      auto w = weight({4, 3});
      auto res = testutil::check_gradients(
          [&] { return ad::sum_all(ad::mul(ad::matmul(a, b), w)); }, {a, b});
      INFO(res.where);
      REQUIRE(res.ok);
    }
    {  // activations, norm, softmax, pooling, loss
      auto x = leaf({4, 6});
      for (auto& v : x->value)
        if (std::abs(v) < 1e-3) v = 0.2;  // stay off the relu kink
      auto g = leaf({6}), be = leaf({6});
      auto w = weight({4, 6});
      auto res = testutil::check_gradients(
          [&] {
            auto h = ad::layer_norm(ad::gelu(x), g, be);
            return ad::sum_all(ad::mul(ad::softmax_rows(ad::relu(h)), w));
          },
          {x, g, be});
      INFO(res.where);
      REQUIRE(res.ok);

      auto target = weight({2, 6});
      res = testutil::check_gradients(
          [&] { return ad::mse_loss(ad::mean_pool_rows(x, 2), target); }, {x});
      INFO(res.where);
      REQUIRE(res.ok);
    }
    {  // sum reduction and dropout (mask replayed for determinism)
      auto x = leaf({4, 4});
      auto res = testutil::check_gradients(
          [&] { return ad::sum_all(ad::mul(x, x)); }, {x});
      INFO(res.where);
      REQUIRE(res.ok);
      auto w = weight({4, 4});
      const std::uint64_t mask_seed = rng.next_u64();
      res = testutil::check_gradients(
          [&] {
            Rng mask_rng(mask_seed);
            return ad::sum_all(
                ad::mul(ad::dropout(x, 0.25, mask_rng, true), w));
          },
          {x});
      INFO(res.where);
      REQUIRE(res.ok);
    }
    {  // fused attention in all three positional modes
      const std::int64_t B = 2, L = 3, H = 2, D = 8;
      auto rope = make_rope_tables<double>(L, D / H);
      auto alibi = alibi_bias<double>(L, H);
      auto q = leaf({B * L, D}), k = leaf({B * L, D}), v = leaf({B * L, D});
      auto w = weight({B * L, D});
      for (int mode = 0; mode < 3; ++mode) {
        auto res = testutil::check_gradients(
            [&] {
              return ad::sum_all(ad::mul(
                  ad::self_attention(q, k, v, B, L, H,
                                     mode == 1 ? &rope : nullptr,
                                     mode == 2 ? &alibi : nullptr),
                  w));
            },
            {q, k, v});
        INFO("attention mode " << mode << ": " << res.where);
        REQUIRE(res.ok);
      }
    }
  }

  // one full encoder layer, every positional mode
  for (auto mode : {PositionalMode::kSinusoidal, PositionalMode::kRope,
                    PositionalMode::kAlibi}) {
    for (int trial = 0; trial < 10; ++trial) {
      EncoderConfig cfg;
      cfg.d_model = 8;
      cfg.n_heads = 2;
      cfg.n_layers = 1;
      cfg.ffn_dim = 12;
      cfg.dropout_rate = 0.0;
      cfg.positional_mode = mode;
      Rng init(900 + trial);
      TransformerEncoder<double> enc(cfg, 4, init);
      auto x = weight({6, 4});
      auto target = weight({2, 8});
      std::vector<ad::TensorPtr<double>> leaves;
      for (const auto& [name, p] : enc.parameters()) leaves.push_back(p);
      auto res = testutil::check_gradients(
          [&] { return ad::mse_loss(enc.pool(enc.encode(x, 2, 3), 3), target); },
          leaves);
      INFO(to_string(mode) << " trial " << trial << ": " << res.where);
      REQUIRE(res.ok);
    }
  }
  const double dt = seconds_since(t0);
  std::printf("  gradient checks in %.1f s\n", dt);
  CHECK(dt < 60.0);
}

TEST_CASE("criterion 3: ensemble statistics match brute force to 1e-12") {
  Rng rng(31415);
  for (int inst = 0; inst < 100; ++inst) {
    const std::int64_t rows = 1 + rng.uniform_int(8);
    const std::int64_t dim = 1 + rng.uniform_int(6);
    const int k = 2 + static_cast<int>(rng.uniform_int(7));
    std::vector<std::vector<double>> preds(k);
    for (auto& p : preds) {
      p.resize(rows * dim);
      for (auto& v : p) v = rng.uniform(-3.0, 3.0);
    }
    const auto st = aggregate_predictions(preds, rows, dim);
    for (std::int64_t r = 0; r < rows; ++r) {
      double u_acc = 0.0;
      for (std::int64_t j = 0; j < dim; ++j) {
        double mean = 0.0;
        for (const auto& p : preds) mean += p[r * dim + j];
        mean /= k;
        double var = 0.0;
        for (const auto& p : preds) {
          const double d = p[r * dim + j] - mean;
          var += d * d;
        }
        var /= k;  // population convention
        REQUIRE(std::abs(st.mean[r * dim + j] - mean) <= 1e-12);
        REQUIRE(std::abs(st.variance[r * dim + j] - var) <= 1e-12);
        u_acc += var;
      }
      REQUIRE(std::abs(st.u[r] - u_acc / dim) <= 1e-12);
    }
  }
}

TEST_CASE("criterion 4: ranking metrics match exhaustive oracles to 1e-12") {
  Rng rng(2718);
  auto auroc_oracle = [](const std::vector<double>& s,
                         const std::vector<int>& y) {
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
  };
  auto auprc_oracle = [](const std::vector<double>& s,
                         const std::vector<int>& y) {
    std::set<double, std::greater<double>> thresholds(s.begin(), s.end());
    std::size_t n_pos = 0;
    for (int l : y) n_pos += l;
    double area = 0.0, prev_recall = 0.0;
    for (double th : thresholds) {
      std::size_t tp = 0, fp = 0;
      for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] >= th) (y[i] ? tp : fp) += 1;
      const double recall = double(tp) / double(n_pos);
      const double precision = double(tp) / double(tp + fp);
      area += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
    return area;
  };

  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 2 + rng.uniform_int(99);  // up to 100 days
    std::vector<double> s(n);
    std::vector<int> y(n, 0);
    const int levels = 2 + static_cast<int>(rng.uniform_int(10));  // ties
    for (auto& v : s) v = double(rng.uniform_int(levels)) / levels;
    if (inst % 5 == 0) {
      y[rng.uniform_int(n)] = 1;  // single positive
    } else {
      for (auto& l : y) l = rng.uniform() < 0.3 ? 1 : 0;
      std::size_t n_pos = 0;
      for (int l : y) n_pos += l;
      if (n_pos == 0) y[0] = 1;
      if (n_pos == n) y[0] = 0;
    }
    std::size_t n_pos = 0;
    for (int l : y) n_pos += l;

    const auto prc = auprc(s, y);
    REQUIRE(prc.has_value());
    REQUIRE(std::abs(*prc - auprc_oracle(s, y)) <= 1e-12);
    if (n_pos < n) {
      const auto roc = auroc(s, y);
      REQUIRE(roc.has_value());
      REQUIRE(std::abs(*roc - auroc_oracle(s, y)) <= 1e-12);
    }
  }
}

TEST_CASE("criterion 5: anomaly normalization is ranking-neutral; threshold strict") {
  Rng rng(5150);
  for (int patient = 0; patient < 10; ++patient) {
    const std::size_t n = 20 + rng.uniform_int(60);
    std::vector<double> u(n);
    std::vector<int> y(n, 0);
    for (auto& v : u) v = rng.uniform(0.0, 2.0);
    for (auto& l : y) l = rng.uniform() < 0.3 ? 1 : 0;
    y[0] = 1;
    y[1] = 0;
    HealthyDistribution dist{0.1, 1.9, 0.7};
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = anomaly_score(u[i], dist);
    REQUIRE(std::abs(*auroc(u, y) - *auroc(a, y)) <= 1e-12);
    REQUIRE(std::abs(*auprc(u, y) - *auprc(a, y)) <= 1e-12);
  }
  // strict inequality at the threshold
  REQUIRE(classify(-0.1, -0.1) == 0);
  REQUIRE(classify(-0.1 + 1e-12, -0.1) == 1);
  REQUIRE(classify(0.0, 0.0) == 0);
}

TEST_CASE("criterion 6: fusion ordering min <= weighted <= max, exactly") {
  Rng rng(606);
  for (int t = 0; t < 1000; ++t) {
    const double a = rng.uniform(-5.0, 5.0);
    const double b = rng.uniform(-5.0, 5.0);
    const double lo = fuse(a, b, FusionMode::kMin);
    const double hi = fuse(a, b, FusionMode::kMax);
    for (int g = 0; g <= 10; ++g) {
      const double w = fuse(a, b, FusionMode::kWeighted, g / 10.0);
      REQUIRE(lo <= w);
      REQUIRE(w <= hi);
    }
  }
}

TEST_CASE("criterion 7: resampling controls ensemble diversity") {
  // training windows from two synthetic-like days; held-out batch from a third
  auto make_day = [](int date) {
    auto day = testutil::make_valid_day("p", date);
    for (int i = 0; i < kSlotsPerDay; ++i)
      for (int c = 0; c < kNumChannels; ++c)
        day.slots[i].set_channel(
            c, std::sin(2.0 * 3.14159265 * i / kSlotsPerDay + 0.4 * c * date));
    return day;
  };
  std::vector<DayRecord> train_days = {make_day(0), make_day(1)};
  std::vector<DayRecord> held_out = {make_day(2)};
  auto train_ds = build_forecast_dataset<float>(train_days, 24, 12);
  auto held_ds = build_forecast_dataset<float>(held_out, 24, 12);

  EncoderConfig ec;
  ec.d_model = 16;
  ec.n_heads = 2;
  ec.n_layers = 1;
  ec.ffn_dim = 16;
  ec.dropout_rate = 0.0;
  Rng init(4242);
  TransformerEncoder<float> enc(ec, kForecastInputDim, init);
  TrainConfig tc;
  tc.epochs = 8;
  const auto z_held = precompute_embeddings(enc, held_ds.windows);

  {  // fraction 0 + shared seeds: the ensemble collapses
    std::vector<std::uint64_t> shared(5, 123);
    auto heads = train_ensemble(enc, train_ds, 5, 0.0, tc, 9, shared);
    auto st = ensemble_statistics(heads, z_held, enc.d_model());
    for (double u : st.u) REQUIRE(u < 1e-10);
  }
  {  // fraction 0.2 + distinct seeds: positive median disagreement
    auto heads = train_ensemble(enc, train_ds, 5, 0.2, tc, 9);
    auto st = ensemble_statistics(heads, z_held, enc.d_model());
    std::vector<double> u = st.u;
    std::sort(u.begin(), u.end());
    REQUIRE(u[u.size() / 2] > 0.0);
  }
}

namespace {

// shared state between the end-to-end criterion and the trend check
struct SeedAuprc {
  double heart = 0.0;
  double sleep = 0.0;
  double max_fused = 0.0;
};
struct EndToEndRun {
  bool ran = false;
  double wall_seconds = 0.0;
  std::vector<SeedAuprc> per_seed;
};
EndToEndRun g_e2e;

// aggregate AUPRC of max-fused scores, recomputed from the fused table
double max_fused_auprc(const Paths& paths, std::uint64_t seed) {
  const auto info = day_info_map(paths);
  std::map<std::string, PatientDayScores> per_patient;
  for (const auto& r : io::read_fused_csv(paths.fused(seed))) {
    const auto it = info.find({r.patient_id, r.date_index});
    if (it == info.end() || it->second.split != Split::kTest) continue;
    if (std::isnan(r.a_heart) || std::isnan(r.a_sleep)) continue;
    auto& p = per_patient[r.patient_id];
    p.patient_id = r.patient_id;
    p.scores.push_back(fuse(r.a_heart, r.a_sleep, FusionMode::kMax));
    p.labels.push_back(it->second.label == DayLabel::kRelapse ? 1 : 0);
  }
  std::vector<PatientDayScores> v;
  for (auto& [id, p] : per_patient) v.push_back(std::move(p));
  return evaluate_patients(v).aggregate.auprc.value_or(0.0);
}

}  // namespace

TEST_CASE("criterion 8: end-to-end synthetic detection at default scale") {
  TempDir tmp;
  ExperimentConfig cfg;  // default config throughout
  cfg.output_dir = tmp.path.string();
  cfg.seeds = {1, 2, 3};
  Paths paths(cfg);

  const auto t0 = Clock::now();
  run_synth(cfg);
  run_train(cfg, "forecast");
  run_train(cfg, "multitask");
  run_score(cfg, "forecast");
  run_score(cfg, "multitask");
  run_fuse(cfg);
  g_e2e.wall_seconds = seconds_since(t0);
  g_e2e.ran = true;

  double fused_auroc = 0.0, fused_auprc = 0.0;
  double heart_avg = 0.0, sleep_avg = 0.0;
  for (const std::uint64_t seed : cfg.seeds) {
    const auto m = evaluate_seed_split(paths, seed, Split::kTest);
    g_e2e.per_seed.push_back({m.heart.aggregate.auprc.value_or(0.0),
                              m.sleep.aggregate.auprc.value_or(0.0),
                              max_fused_auprc(paths, seed)});
    fused_auroc += m.fused.aggregate.auroc.value_or(0.0);
    fused_auprc += m.fused.aggregate.auprc.value_or(0.0);
    heart_avg += m.heart.aggregate.avg().value_or(0.0);
    sleep_avg += m.sleep.aggregate.avg().value_or(0.0);
  }
  fused_auroc /= 3.0;
  fused_auprc /= 3.0;
  heart_avg /= 3.0;
  sleep_avg /= 3.0;

  // the 30-minute budget is stated for a 4-core CPU; patients parallelize,
  // so wall time is normalized by min(cores,8)/4 before the comparison
  const unsigned cores =
      std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
  const double normalized = g_e2e.wall_seconds * cores / 4.0;
  std::printf(
      "  8 patients x 3 seeds in %.0f s wall on %u cores (%.0f s normalized "
      "to 4 cores); fused AUROC %.3f, AUPRC %.3f; forecast AVG %.3f, "
      "multitask AVG %.3f\n",
      g_e2e.wall_seconds, cores, normalized, fused_auroc, fused_auprc,
      heart_avg, sleep_avg);

  CHECK(fused_auroc >= 0.80);
  CHECK(fused_auprc >= 0.60);
  CHECK(heart_avg >= 0.70);
  CHECK(sleep_avg >= 0.70);
  CHECK(normalized <= 1800.0);  // 30 minutes on the 4-core reference
}

TEST_CASE("criterion 9: max fusion matches the best single-pipeline AUPRC trend") {
  REQUIRE(g_e2e.ran);  // reuses the criterion-8 artifacts
  int seeds_where_max_wins = 0;
  for (const auto& m : g_e2e.per_seed) {
    std::printf("  seed: max-fused AUPRC %.3f vs singles %.3f / %.3f\n",
                m.max_fused, m.heart, m.sleep);
    if (m.max_fused >= m.heart && m.max_fused >= m.sleep)
      ++seeds_where_max_wins;
  }
  CHECK(seeds_where_max_wins >= 2);
}

TEST_CASE("criterion 10: identical config and seeds give byte-identical scores") {
  TempDir a, b;
  auto small = [](const fs::path& out) {
    ExperimentConfig cfg;
    cfg.output_dir = out.string();
    cfg.n_patients = 2;
    cfg.n_train = 16;
    cfg.n_val = 8;
    cfg.n_test = 8;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.ffn_dim = 16;
    cfg.epochs = 4;
    cfg.seeds = {1, 2};
    return cfg;
  };
  auto cfg_a = small(a.path);
  auto cfg_b = small(b.path);
  for (auto* cfg : {&cfg_a, &cfg_b}) {
    run_synth(*cfg);
    run_train(*cfg, "forecast");
    run_train(*cfg, "multitask");
    run_score(*cfg, "forecast");
    run_score(*cfg, "multitask");
  }
  for (const std::uint64_t seed : {1, 2}) {
    for (const char* pipe : {"forecast", "multitask"}) {
      const auto csv_a = slurp(Paths(cfg_a).day_scores(pipe, seed));
      const auto csv_b = slurp(Paths(cfg_b).day_scores(pipe, seed));
      REQUIRE(!csv_a.empty());
      REQUIRE(csv_a == csv_b);
    }
  }
}

TEST_CASE("criterion 11: stride and posenc ablations complete their grids") {
  TempDir tmp;
  ExperimentConfig cfg;  // reduced scale: the harness is under test
  cfg.output_dir = tmp.path.string();
  cfg.n_patients = 2;
  cfg.n_train = 12;
  cfg.n_val = 8;
  cfg.n_test = 8;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.ffn_dim = 16;
  cfg.epochs = 2;
  cfg.seeds = {1};
  Paths paths(cfg);

  const auto stride_rows = run_ablate(cfg, "stride");
  std::set<std::string> stride_values;
  for (const auto& r : stride_rows) stride_values.insert(r.value);
  CHECK(stride_values == std::set<std::string>{"12", "24", "36", "48"});
  CHECK(stride_rows.size() == 4 * 3);  // grid x {forecast, multitask, fused}
  CHECK(fs::exists(paths.ablate_csv("stride")));

  const auto posenc_rows = run_ablate(cfg, "posenc");
  std::set<std::string> posenc_values;
  for (const auto& r : posenc_rows) posenc_values.insert(r.value);
  CHECK(posenc_values == std::set<std::string>{"sinusoidal", "rope", "alibi"});
  CHECK(posenc_rows.size() == 3 * 3);
  CHECK(fs::exists(paths.ablate_csv("posenc")));
}
