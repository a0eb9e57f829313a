#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// 5-minute feature bins, HRV descriptors, time-of-day embeddings and the
// raw-stream aggregation that produces them.

namespace relapse {

inline constexpr int kSlotsPerDay = 288;
inline constexpr int kSlotMinutes = 5;
inline constexpr int kMinutesPerDay = 1440;
inline constexpr std::int64_t kMsPerDay = 86'400'000;
inline constexpr std::int64_t kMsPerSlot = 300'000;

// Input channel order (fixed): accel_norm, gyro_norm, steps, then the five
// cardiac features in their fixed order rr_mean, rmssd, sdnn,
// hf_lomb_power, hr_mean.
inline constexpr int kNumChannels = 8;
inline constexpr int kNumCardiac = 5;
inline constexpr std::array<const char*, kNumChannels> kChannelNames = {
    "accel_norm", "gyro_norm",     "steps",  "rr_mean",
    "rmssd",      "sdnn",          "hf_lomb_power", "hr_mean"};

// channels 0..2 carry the motion mask, channels 3..7 the cardiac mask
inline constexpr bool channel_is_cardiac(int c) { return c >= 3; }

struct SlotFeatures {
  int slot_index = 0;
  double accel_norm = 0.0;
  double gyro_norm = 0.0;
  double hr_mean = 0.0;
  double rr_mean = 0.0;
  double rmssd = 0.0;
  double sdnn = 0.0;
  double hf_lomb_power = 0.0;
  double steps = 0.0;
  // Validity is tracked per sensor group; a bin is valid when both groups
  // are. Invalid groups hold the imputation placeholder (0), never stale
  // or fabricated values.
  bool motion_valid = false;
  bool cardiac_valid = false;

  bool valid() const { return motion_valid && cardiac_valid; }

  double channel(int c) const {
    switch (c) {
      case 0: return accel_norm;
      case 1: return gyro_norm;
      case 2: return steps;
      case 3: return rr_mean;
      case 4: return rmssd;
      case 5: return sdnn;
      case 6: return hf_lomb_power;
      case 7: return hr_mean;
    }
    throw std::out_of_range("channel index " + std::to_string(c));
  }

  void set_channel(int c, double v) {
    switch (c) {
      case 0: accel_norm = v; return;
      case 1: gyro_norm = v; return;
      case 2: steps = v; return;
      case 3: rr_mean = v; return;
      case 4: rmssd = v; return;
      case 5: sdnn = v; return;
      case 6: hf_lomb_power = v; return;
      case 7: hr_mean = v; return;
    }
    throw std::out_of_range("channel index " + std::to_string(c));
  }

  // cardiac vector (rr_mean, rmssd, sdnn, hf_lomb_power, hr_mean)
  std::array<double, kNumCardiac> cardiac() const {
    return {rr_mean, rmssd, sdnn, hf_lomb_power, hr_mean};
  }
};

enum class DayLabel { kRemission, kRelapse, kUnknown };
enum class Split { kTrain, kVal, kTest };

inline std::string to_string(DayLabel l) {
  switch (l) {
    case DayLabel::kRemission: return "remission";
    case DayLabel::kRelapse: return "relapse";
    case DayLabel::kUnknown: return "unknown";
  }
  return "?";
}

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline DayLabel day_label_from_string(const std::string& s) {
  if (s == "remission") return DayLabel::kRemission;
  if (s == "relapse") return DayLabel::kRelapse;
  if (s == "unknown") return DayLabel::kUnknown;
  throw std::invalid_argument("unknown day label: '" + s + "'");
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split: '" + s + "'");
}

struct DayRecord {
  std::string patient_id;
  int date_index = 0;
  std::vector<SlotFeatures> slots;  // exactly kSlotsPerDay, by slot_index
  std::optional<double> sleep_onset_min;  // minutes of day in [0, 1440)
  std::optional<double> wake_min;
  DayLabel label = DayLabel::kUnknown;
  Split split = Split::kTrain;

  bool has_sleep_annotation() const {
    return sleep_onset_min.has_value() && wake_min.has_value();
  }
};

struct TimeEmbedding {
  double sin_c = 0.0;
  double cos_c = 1.0;
};

// (sin, cos) of the daily phase 2*pi*m/1440.
inline TimeEmbedding time_embedding(double minutes_of_day) {
  if (!(minutes_of_day >= 0.0) || minutes_of_day >= kMinutesPerDay)
    throw std::invalid_argument("time_embedding: minutes of day " +
                                std::to_string(minutes_of_day) +
                                " outside [0,1440)");
  const double phase =
      2.0 * 3.14159265358979323846 * minutes_of_day / kMinutesPerDay;
  return {std::sin(phase), std::cos(phase)};
}

inline double slot_center_minutes(int slot_index) {
  return slot_index * static_cast<double>(kSlotMinutes) + kSlotMinutes / 2.0;
}

// ---------------------------------------------------------------------------
// HRV descriptors
// ---------------------------------------------------------------------------

struct RrFeatures {
  std::optional<double> rr_mean;        // >= 1 interval
  std::optional<double> rmssd;          // >= 2 intervals
  std::optional<double> sdnn;           // >= 2 intervals
  std::optional<double> hf_lomb_power;  // >= 4 intervals

  bool complete() const {
    return rr_mean && rmssd && sdnn && hf_lomb_power;
  }
};

// Classic Lomb-Scargle periodogram (unnormalized; power in x's units
// squared) of x sampled at times t, evaluated at `freqs` (Hz).
inline std::vector<double> lomb_scargle(std::span<const double> t,
                                        std::span<const double> x,
                                        std::span<const double> freqs) {
  if (t.size() != x.size())
    throw std::invalid_argument("lomb_scargle: t and x lengths differ");
  const std::size_t n = t.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);

  std::vector<double> power(freqs.size(), 0.0);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (std::size_t fi = 0; fi < freqs.size(); ++fi) {
    const double omega = two_pi * freqs[fi];
    double s2 = 0.0, c2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      s2 += std::sin(2.0 * omega * t[j]);
      c2 += std::cos(2.0 * omega * t[j]);
    }
    const double tau = std::atan2(s2, c2) / (2.0 * omega);
    double cs = 0.0, cc = 0.0, ss = 0.0, sc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double arg = omega * (t[j] - tau);
      const double c = std::cos(arg), s = std::sin(arg);
      const double xc = x[j] - mean;
      cs += xc * c;
      sc += xc * s;
      cc += c * c;
      ss += s * s;
    }
    double p = 0.0;
    if (cc > 0.0) p += cs * cs / cc;
    if (ss > 0.0) p += sc * sc / ss;
    power[fi] = 0.5 * p;
  }
  return power;
}

inline constexpr int kLombGridSize = 128;
inline constexpr double kLombGridLo = 0.04;   // Hz
inline constexpr double kLombGridHi = 0.5;    // Hz
inline constexpr double kHfBandLo = 0.15;     // Hz
inline constexpr double kHfBandHi = 0.40;     // Hz

inline std::vector<double> lomb_frequency_grid() {
  std::vector<double> f(kLombGridSize);
  for (int i = 0; i < kLombGridSize; ++i)
    f[i] = kLombGridLo +
           i * (kLombGridHi - kLombGridLo) / (kLombGridSize - 1);
  return f;
}

// Trapezoid integral of the periodogram over grid points inside the HF band.
inline double integrate_band(std::span<const double> freqs,
                             std::span<const double> power, double lo,
                             double hi) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < freqs.size(); ++i) {
    if (freqs[i] < lo || freqs[i + 1] > hi) continue;
    acc += 0.5 * (power[i] + power[i + 1]) * (freqs[i + 1] - freqs[i]);
  }
  return acc;
}

// HF spectral power of an RR series (ms): the periodogram of RR against
// cumulative beat time, integrated over 0.15-0.40 Hz.
inline double rr_hf_lomb_power(std::span<const double> rr_ms) {
  std::vector<double> t(rr_ms.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < rr_ms.size(); ++i) {
    acc += rr_ms[i] / 1000.0;  // seconds
    t[i] = acc;
  }
  const auto freqs = lomb_frequency_grid();
  const auto power = lomb_scargle(t, rr_ms, freqs);
  return integrate_band(freqs, power, kHfBandLo, kHfBandHi);
}

// Mean RR, RMSSD, SDNN (population) and HF Lomb-Scargle power for the RR
// intervals of one bin. Channels that need more intervals than provided
// come back unset rather than throwing.
inline RrFeatures rr_features(std::span<const double> rr_ms) {
  RrFeatures out;
  const std::size_t n = rr_ms.size();
  if (n == 0) return out;
  for (double v : rr_ms)
    if (!(v > 0.0))
      throw std::invalid_argument("rr_features: intervals must be positive");

  double mean = 0.0;
  for (double v : rr_ms) mean += v;
  mean /= static_cast<double>(n);
  out.rr_mean = mean;

  if (n >= 2) {
    double ssd = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double d = rr_ms[i] - rr_ms[i - 1];
      ssd += d * d;
    }
    out.rmssd = std::sqrt(ssd / static_cast<double>(n - 1));
    double var = 0.0;
    for (double v : rr_ms) var += (v - mean) * (v - mean);
    out.sdnn = std::sqrt(var / static_cast<double>(n));
  }
  if (n >= 4) out.hf_lomb_power = rr_hf_lomb_power(rr_ms);
  return out;
}

// ---------------------------------------------------------------------------
// raw-stream aggregation
// ---------------------------------------------------------------------------

struct RawSample {
  std::int64_t timestamp_ms = 0;  // within the day: [0, kMsPerDay)
  std::string channel;            // accel_{x,y,z}, gyro_{x,y,z}, hr, rr, steps
  double value = 0.0;
};

namespace detail {

// xyz triplets keyed by timestamp; a sample needs all three axes
inline std::vector<double> triplet_norms(
    const std::map<std::int64_t, std::array<std::optional<double>, 3>>& m) {
  std::vector<double> norms;
  for (const auto& [ts, axes] : m) {
    if (!axes[0] || !axes[1] || !axes[2]) continue;
    norms.push_back(std::sqrt(*axes[0] * *axes[0] + *axes[1] * *axes[1] +
                              *axes[2] * *axes[2]));
  }
  return norms;
}

}  // namespace detail

// Aggregates a day's raw samples into 288 bins: mean per-sample norms for
// accel/gyro, mean HR, summed steps, HRV features from the bin's RR list.
// Empty bins stay invalid. Timestamps must be non-decreasing per channel.
inline std::vector<SlotFeatures> aggregate_raw(
    std::span<const RawSample> samples) {
  struct BinAccum {
    std::map<std::int64_t, std::array<std::optional<double>, 3>> accel, gyro;
    std::vector<double> hr, rr;
    double steps = 0.0;
    bool has_steps = false;
  };
  std::vector<BinAccum> bins(kSlotsPerDay);
  std::map<std::string, std::int64_t> last_ts;

  for (const auto& s : samples) {
    if (s.timestamp_ms < 0 || s.timestamp_ms >= kMsPerDay)
      throw std::invalid_argument(
          "aggregate_raw: timestamp " + std::to_string(s.timestamp_ms) +
          " outside the day");
    auto [it, inserted] = last_ts.try_emplace(s.channel, s.timestamp_ms);
    if (!inserted) {
      if (s.timestamp_ms < it->second)
        throw std::invalid_argument(
            "aggregate_raw: non-monotone timestamps on channel '" + s.channel +
            "'");
      it->second = s.timestamp_ms;
    }
    auto& bin = bins[static_cast<std::size_t>(s.timestamp_ms / kMsPerSlot)];
    if (s.channel == "accel_x") bin.accel[s.timestamp_ms][0] = s.value;
    else if (s.channel == "accel_y") bin.accel[s.timestamp_ms][1] = s.value;
    else if (s.channel == "accel_z") bin.accel[s.timestamp_ms][2] = s.value;
    else if (s.channel == "gyro_x") bin.gyro[s.timestamp_ms][0] = s.value;
    else if (s.channel == "gyro_y") bin.gyro[s.timestamp_ms][1] = s.value;
    else if (s.channel == "gyro_z") bin.gyro[s.timestamp_ms][2] = s.value;
    else if (s.channel == "hr") bin.hr.push_back(s.value);
    else if (s.channel == "rr") bin.rr.push_back(s.value);
    else if (s.channel == "steps") { bin.steps += s.value; bin.has_steps = true; }
    else
      throw std::invalid_argument("aggregate_raw: unknown channel '" +
                                  s.channel + "'");
  }

  std::vector<SlotFeatures> out(kSlotsPerDay);
  for (int i = 0; i < kSlotsPerDay; ++i) {
    auto& slot = out[i];
    slot.slot_index = i;
    const auto& bin = bins[i];
    const auto accel_norms = detail::triplet_norms(bin.accel);
    const auto gyro_norms = detail::triplet_norms(bin.gyro);
    if (!accel_norms.empty() && !gyro_norms.empty()) {
      double a = 0.0, g = 0.0;
      for (double v : accel_norms) a += v;
      for (double v : gyro_norms) g += v;
      slot.accel_norm = a / accel_norms.size();
      slot.gyro_norm = g / gyro_norms.size();
      slot.steps = bin.steps;  // absent step samples mean zero steps
      slot.motion_valid = true;
    }
    if (!bin.hr.empty()) {
      const auto rrf = rr_features(bin.rr);
      if (rrf.complete()) {
        double h = 0.0;
        for (double v : bin.hr) h += v;
        slot.hr_mean = h / bin.hr.size();
        slot.rr_mean = *rrf.rr_mean;
        slot.rmssd = *rrf.rmssd;
        slot.sdnn = *rrf.sdnn;
        slot.hf_lomb_power = *rrf.hf_lomb_power;
        slot.cardiac_valid = true;
      }
    }
  }
  return out;
}

}  // namespace relapse
