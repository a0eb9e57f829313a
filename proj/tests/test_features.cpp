#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "relapse/features.hpp"
#include "relapse/rng.hpp"

using namespace relapse;

namespace {

// Independent reference: direct evaluation of the Lomb-Scargle definition,
// written as plain two-pass loops, kept free of the library implementation.
double reference_lomb_power(const std::vector<double>& t,
                            const std::vector<double>& x, double freq) {
  const double pi = 3.14159265358979323846;
  const double w = 2.0 * pi * freq;
  double xbar = 0.0;
  for (double v : x) xbar += v;
  xbar /= x.size();
  double num_s = 0.0, num_c = 0.0;
  for (double tj : t) {
    num_s += std::sin(2.0 * w * tj);
    num_c += std::cos(2.0 * w * tj);
  }
  const double tau = std::atan2(num_s, num_c) / (2.0 * w);
  double a = 0.0, b = 0.0, ca = 0.0, cb = 0.0;
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double c = std::cos(w * (t[j] - tau));
    const double s = std::sin(w * (t[j] - tau));
    a += (x[j] - xbar) * c;
    b += (x[j] - xbar) * s;
    ca += c * c;
    cb += s * s;
  }
  double p = 0.0;
  if (ca > 0.0) p += a * a / ca;
  if (cb > 0.0) p += b * b / cb;
  return 0.5 * p;
}

double reference_band_integral(const std::vector<double>& t,
                               const std::vector<double>& x,
                               const std::vector<double>& freqs, double lo,
                               double hi) {
  std::vector<double> p(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i)
    p[i] = reference_lomb_power(t, x, freqs[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < freqs.size(); ++i)
    if (freqs[i] >= lo && freqs[i + 1] <= hi)
      acc += 0.5 * (p[i] + p[i + 1]) * (freqs[i + 1] - freqs[i]);
  return acc;
}

// RR series whose value is modulated by a pure sinusoid at `freq` Hz
std::vector<double> modulated_rr(double freq, int n) {
  const double pi = 3.14159265358979323846;
  std::vector<double> rr(n);
  double t = 0.0;
  for (int i = 0; i < n; ++i) {
    rr[i] = 800.0 + 50.0 * std::sin(2.0 * pi * freq * t);
    t += rr[i] / 1000.0;
  }
  return rr;
}

}  // namespace

TEST_CASE("rr_features on simple series") {
  SECTION("constant series has zero variability") {
    std::vector<double> rr = {800.0, 800.0, 800.0};
    auto f = rr_features(rr);
    CHECK(*f.rr_mean == Catch::Approx(800.0));
    CHECK(*f.rmssd == Catch::Approx(0.0).margin(1e-12));
    CHECK(*f.sdnn == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("two intervals: one difference, population std") {
    std::vector<double> rr = {790.0, 810.0};
    auto f = rr_features(rr);
    CHECK(*f.rr_mean == Catch::Approx(800.0));
    CHECK(*f.rmssd == Catch::Approx(20.0));
    CHECK(*f.sdnn == Catch::Approx(10.0));
    CHECK_FALSE(f.hf_lomb_power.has_value());  // needs >= 4
  }
  SECTION("channel availability follows interval count") {
    CHECK_FALSE(rr_features(std::vector<double>{}).rr_mean.has_value());
    auto one = rr_features(std::vector<double>{820.0});
    CHECK(one.rr_mean.has_value());
    CHECK_FALSE(one.rmssd.has_value());
    CHECK_FALSE(one.sdnn.has_value());
    auto four = rr_features(std::vector<double>{800.0, 810.0, 790.0, 805.0});
    CHECK(four.complete());
  }
  SECTION("non-positive intervals are rejected") {
    CHECK_THROWS_AS(rr_features(std::vector<double>{800.0, -5.0}),
                    std::invalid_argument);
  }
}

TEST_CASE("rmssd/sdnn shift invariance, rr_mean shifts by the constant") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> rr(12);
    for (auto& v : rr) v = rng.uniform(600.0, 1000.0);
    auto base = rr_features(rr);
    const double shift = rng.uniform(10.0, 200.0);
    for (auto& v : rr) v += shift;
    auto shifted = rr_features(rr);
    CHECK(*shifted.rr_mean == Catch::Approx(*base.rr_mean + shift));
    CHECK(*shifted.rmssd == Catch::Approx(*base.rmssd).margin(1e-9));
    CHECK(*shifted.sdnn == Catch::Approx(*base.sdnn).margin(1e-9));
  }
}

TEST_CASE("hf power matches an independent Lomb-Scargle reference") {
  const auto rr = modulated_rr(0.25, 300);
  std::vector<double> t(rr.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < rr.size(); ++i) {
    acc += rr[i] / 1000.0;
    t[i] = acc;
  }

  auto f = rr_features(rr);
  REQUIRE(f.hf_lomb_power.has_value());

  SECTION("band integral agrees with the reference on the production grid") {
    const auto freqs = lomb_frequency_grid();
    const double ref = reference_band_integral(t, rr, freqs, 0.15, 0.40);
    CHECK(*f.hf_lomb_power ==
          Catch::Approx(ref).epsilon(0.02));  // within 2%
  }
  SECTION("a 0.25 Hz tone concentrates power inside the HF band") {
    // dense grid: nearly all spectral mass must fall in 0.15-0.40 Hz
    std::vector<double> dense(1024);
    for (int i = 0; i < 1024; ++i)
      dense[i] = 0.04 + i * (0.5 - 0.04) / 1023.0;
    const double band = reference_band_integral(t, rr, dense, 0.15, 0.40);
    const double total = reference_band_integral(t, rr, dense, 0.04, 0.5);
    CHECK(band / total > 0.8);
  }
  SECTION("a 0.05 Hz tone leaves the HF band nearly empty") {
    const auto slow = modulated_rr(0.05, 300);
    auto g = rr_features(slow);
    CHECK(*g.hf_lomb_power < 0.05 * *f.hf_lomb_power);
  }
}

TEST_CASE("time_embedding lands on the daily circle") {
  SECTION("anchor times") {
    auto mid = time_embedding(0.0);
    CHECK(mid.sin_c == Catch::Approx(0.0).margin(1e-12));
    CHECK(mid.cos_c == Catch::Approx(1.0));
    auto six = time_embedding(360.0);  // quarter period
    CHECK(six.sin_c == Catch::Approx(1.0));
    CHECK(six.cos_c == Catch::Approx(0.0).margin(1e-12));
    auto noon = time_embedding(720.0);  // half period
    CHECK(noon.sin_c == Catch::Approx(0.0).margin(1e-12));
    CHECK(noon.cos_c == Catch::Approx(-1.0));
  }
  SECTION("unit circle invariant") {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
      auto e = time_embedding(rng.uniform(0.0, 1439.999));
      CHECK(e.sin_c * e.sin_c + e.cos_c * e.cos_c ==
            Catch::Approx(1.0).margin(1e-9));
    }
  }
  SECTION("out of range is rejected") {
    CHECK_THROWS_AS(time_embedding(-1.0), std::invalid_argument);
    CHECK_THROWS_AS(time_embedding(1440.0), std::invalid_argument);
  }
}

TEST_CASE("aggregate_raw bins a day of raw samples") {
  SECTION("empty stream gives 288 invalid bins") {
    auto slots = aggregate_raw(std::vector<RawSample>{});
    REQUIRE(slots.size() == 288);
    for (const auto& s : slots) CHECK_FALSE(s.valid());
  }
  SECTION("accel norms average per sample") {
    std::vector<RawSample> raw = {
        {1000, "accel_x", 3.0}, {1000, "accel_y", 0.0}, {1000, "accel_z", 0.0},
        {2000, "accel_x", 0.0}, {2000, "accel_y", 4.0}, {2000, "accel_z", 0.0},
        {1500, "gyro_x", 1.0},  {1500, "gyro_y", 0.0},  {1500, "gyro_z", 0.0},
    };
    auto slots = aggregate_raw(raw);
    CHECK(slots[0].accel_norm == Catch::Approx(3.5));  // mean of norms 3 and 4
    CHECK(slots[0].motion_valid);
    CHECK_FALSE(slots[0].cardiac_valid);
  }
  SECTION("constant heart rate aggregates to its mean in every bin") {
    std::vector<RawSample> raw;
    for (int slot = 0; slot < 288; ++slot) {
      const std::int64_t base = slot * kMsPerSlot;
      for (int i = 0; i < 5; ++i)
        raw.push_back({base + i * 1000, "hr", 60.0});
      for (int i = 0; i < 6; ++i)
        raw.push_back({base + i * 1000, "rr", 1000.0});
      raw.push_back({base, "accel_x", 0.1});
      raw.push_back({base, "accel_y", 0.0});
      raw.push_back({base, "accel_z", 0.0});
      raw.push_back({base, "gyro_x", 0.1});
      raw.push_back({base, "gyro_y", 0.0});
      raw.push_back({base, "gyro_z", 0.0});
    }
    // channel-major order keeps per-channel timestamps monotone
    std::stable_sort(raw.begin(), raw.end(),
                     [](const RawSample& a, const RawSample& b) {
                       return a.channel < b.channel;
                     });
    auto slots = aggregate_raw(raw);
    for (const auto& s : slots) {
      CHECK(s.hr_mean == Catch::Approx(60.0));
      CHECK(s.valid());
    }
  }
  SECTION("steps sum within the bin") {
    std::vector<RawSample> raw = {
        {100, "accel_x", 1.0}, {100, "accel_y", 0.0}, {100, "accel_z", 0.0},
        {100, "gyro_x", 1.0},  {100, "gyro_y", 0.0},  {100, "gyro_z", 0.0},
        {200, "steps", 12.0},  {250000, "steps", 8.0},
    };
    auto slots = aggregate_raw(raw);
    CHECK(slots[0].steps == Catch::Approx(20.0));
  }
  SECTION("non-monotone timestamps per channel are rejected") {
    std::vector<RawSample> raw = {{5000, "hr", 70.0}, {4000, "hr", 71.0}};
    CHECK_THROWS_AS(aggregate_raw(raw), std::invalid_argument);
  }
  SECTION("timestamps outside the day are rejected") {
    std::vector<RawSample> raw = {{kMsPerDay, "hr", 70.0}};
    CHECK_THROWS_AS(aggregate_raw(raw), std::invalid_argument);
  }
  SECTION("unknown channels are rejected") {
    std::vector<RawSample> raw = {{0, "spo2", 98.0}};
    CHECK_THROWS_AS(aggregate_raw(raw), std::invalid_argument);
  }
}
