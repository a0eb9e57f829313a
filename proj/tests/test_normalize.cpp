#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "relapse/normalize.hpp"
#include "testing_util.hpp"

using namespace relapse;

namespace {

DayRecord uniform_day(const std::string& pid, int date, double value) {
  auto day = testutil::make_valid_day(pid, date);
  for (auto& s : day.slots)
    for (int c = 0; c < kNumChannels; ++c) s.set_channel(c, value);
  return day;
}

}  // namespace

TEST_CASE("z-scoring with training statistics") {
  SECTION("constant channel collapses to zeros after centering") {
    std::vector<DayRecord> train = {uniform_day("p", 0, 5.0),
                                    uniform_day("p", 1, 5.0)};
    auto norm = normalize_features(train, train);
    CHECK(norm.stats.centered_only[0]);
    for (const auto& day : norm.days)
      for (const auto& s : day.slots) CHECK(s.channel(0) == 0.0);
  }
  SECTION("value 70 under train mean 60, std 10 maps to 1.0") {
    // two training days alternating 50/70 -> mean 60, population std 10
    auto d0 = uniform_day("p", 0, 50.0);
    auto d1 = uniform_day("p", 1, 70.0);
    std::vector<DayRecord> train = {d0, d1};
    auto probe = uniform_day("p", 2, 70.0);
    probe.split = Split::kVal;
    std::vector<DayRecord> all = {d0, d1, probe};
    auto norm = normalize_features(train, all);
    CHECK(norm.stats.mean[3] == Catch::Approx(60.0));
    CHECK(norm.stats.stddev[3] == Catch::Approx(10.0));
    CHECK(norm.days[2].slots[0].channel(3) == Catch::Approx(1.0));
  }
  SECTION("validation days reproduce an independently computed z-table") {
    // 3-day toy fixture; expectations recomputed from scratch here
    std::vector<DayRecord> train = {testutil::make_valid_day("p", 0),
                                    testutil::make_valid_day("p", 1)};
    train[1].slots[7].set_channel(4, 99.0);  // make the split non-trivial
    auto val = testutil::make_valid_day("p", 2);
    val.split = Split::kVal;
    for (auto& s : val.slots)
      for (int c = 0; c < kNumChannels; ++c)
        s.set_channel(c, s.channel(c) * 1.1 + 0.3);
    std::vector<DayRecord> all = {train[0], train[1], val};
    auto norm = normalize_features(train, all);

    for (int c = 0; c < kNumChannels; ++c) {
      double sum = 0.0;
      std::int64_t n = 0;
      for (const auto& day : train)
        for (const auto& s : day.slots) {
          sum += s.channel(c);
          ++n;
        }
      const double mean = sum / n;
      double var = 0.0;
      for (const auto& day : train)
        for (const auto& s : day.slots)
          var += (s.channel(c) - mean) * (s.channel(c) - mean);
      var /= n;
      const double sd = std::sqrt(var);
      for (int i = 0; i < kSlotsPerDay; i += 37) {
        const double raw = all[2].slots[i].channel(c);
        const double expect = (raw - mean) / sd;
        CHECK(norm.days[2].slots[i].channel(c) ==
              Catch::Approx(expect).margin(1e-12));
      }
    }
  }
  SECTION("invalid bins impute to 0 after normalization") {
    auto day = testutil::make_valid_day("p", 0);
    day.slots[10].cardiac_valid = false;
    day.slots[11].motion_valid = false;
    std::vector<DayRecord> train = {day};
    auto norm = normalize_features(train, train);
    for (int c = 3; c < kNumChannels; ++c)
      CHECK(norm.days[0].slots[10].channel(c) == 0.0);
    for (int c = 0; c < 3; ++c)
      CHECK(norm.days[0].slots[11].channel(c) == 0.0);
  }
  SECTION("channel with no valid training bins is flagged and zeroed") {
    auto day = testutil::make_valid_day("p", 0);
    for (auto& s : day.slots) s.cardiac_valid = false;
    std::vector<DayRecord> train = {day};
    auto norm = normalize_features(train, train);
    for (int c = 3; c < kNumChannels; ++c) {
      CHECK(norm.stats.flagged[c]);
      for (const auto& s : norm.days[0].slots) CHECK(s.channel(c) == 0.0);
    }
    CHECK_FALSE(norm.stats.flagged[0]);
  }
  SECTION("empty training split is an error") {
    std::vector<DayRecord> none;
    std::vector<DayRecord> all = {testutil::make_valid_day("p", 0)};
    CHECK_THROWS_AS(normalize_features(none, all), std::invalid_argument);
  }
}

TEST_CASE("stored statistics exclude validation data") {
  std::vector<DayRecord> train = {testutil::make_valid_day("p", 0),
                                  testutil::make_valid_day("p", 1)};
  auto val = testutil::make_valid_day("p", 2);
  for (auto& s : val.slots)
    for (int c = 0; c < kNumChannels; ++c) s.set_channel(c, s.channel(c) + 3.0);

  auto stats_train = fit_channel_stats(train);
  std::vector<DayRecord> leaky = train;
  leaky.push_back(val);
  auto stats_leaky = fit_channel_stats(leaky);

  CHECK(stats_train == fit_channel_stats(train));  // deterministic
  CHECK_FALSE(stats_train == stats_leaky);  // proves val data was excluded
}
