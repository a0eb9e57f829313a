#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "relapse/features.hpp"
#include "relapse/rng.hpp"

// Synthetic cohort: remission baselines with circadian structure plus
// injectable relapse regimes. Stands in for the private recordings so the
// whole pipeline can be exercised and validated at desk scale.

namespace relapse {

struct PatientProfile {
  std::string id = "p0";
  double base_hr = 65.0;             // bpm
  double hrv_level = 35.0;           // ms, RMSSD scale
  double circadian_amplitude = 6.0;  // bpm
  double circadian_phase_h = 15.0;   // hour of the HR peak
  double activity_level = 1.0;       // unitless daytime scale
  double sleep_onset_mean_min = 1380.0;
  double wake_mean_min = 420.0;
  double sleep_jitter_min = 25.0;
  double hr_noise = 1.5;     // bpm
  double hrv_noise = 3.0;    // ms
  double activity_noise = 0.15;
  double missing_rate = 0.0;  // fraction of bins dropped as invalid
  bool heavy_tailed = false;  // Laplace noise instead of Gaussian

  void validate() const {
    if (base_hr <= 0 || hrv_level <= 0 || circadian_amplitude < 0 ||
        activity_level <= 0 || sleep_jitter_min < 0 || hr_noise < 0 ||
        hrv_noise < 0 || activity_noise < 0 || missing_rate < 0 ||
        missing_rate >= 1)
      throw std::invalid_argument("patient profile: scales must be positive");
    if (sleep_onset_mean_min == wake_mean_min)
      throw std::invalid_argument("patient profile: degenerate sleep window");
  }
};

// Eight profiles mirroring the cohort size, spread over plausible ranges.
inline std::vector<PatientProfile> default_cohort() {
  std::vector<PatientProfile> cohort;
  for (int i = 0; i < 8; ++i) {
    PatientProfile p;
    p.id = "p" + std::to_string(i + 1);
    p.base_hr = 58.0 + 2.5 * i;
    p.hrv_level = 26.0 + 3.0 * (7 - i);
    p.circadian_amplitude = 4.5 + 0.7 * (i % 4);
    p.circadian_phase_h = 14.0 + 0.5 * i;
    p.activity_level = 0.8 + 0.08 * (i % 5);
    p.sleep_onset_mean_min = 1320.0 + 20.0 * (i % 5);  // 22:00 .. 23:20
    p.wake_mean_min = 390.0 + 15.0 * (i % 4);          // 06:30 .. 07:15
    p.sleep_jitter_min = 18.0 + 3.0 * (i % 3);
    p.hr_noise = 1.2 + 0.15 * (i % 3);
    p.hrv_noise = 2.5 + 0.4 * (i % 4);
    p.activity_noise = 0.12 + 0.02 * (i % 3);
    cohort.push_back(std::move(p));
  }
  return cohort;
}

struct SplitDays {
  std::vector<DayRecord> train;
  std::vector<DayRecord> val;
  std::vector<DayRecord> test;

  std::vector<DayRecord> all() const {
    std::vector<DayRecord> out = train;
    out.insert(out.end(), val.begin(), val.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
  }
};

namespace detail {

// same variance as the Gaussian of that scale, heavier tails
inline double laplace_noise(Rng& rng, double stddev) {
  const double u = rng.uniform() - 0.5;
  const double b = stddev / 1.4142135623730951;
  return -b * (u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(u));
}

inline double noise(Rng& rng, double stddev, bool heavy_tailed) {
  return heavy_tailed ? laplace_noise(rng, stddev) : rng.normal(0.0, stddev);
}

inline bool is_asleep(double minute, double onset, double wake) {
  if (onset == wake) return false;
  if (onset < wake) return minute >= onset && minute < wake;
  return minute >= onset || minute < wake;  // interval crosses midnight
}

inline double wrap_minutes(double m) {
  while (m < 0) m += kMinutesPerDay;
  while (m >= kMinutesPerDay) m -= kMinutesPerDay;
  return m;
}

// sleep duration walking forward from onset to wake
inline double sleep_span(double onset, double wake) {
  return wrap_minutes(wake - onset);
}

inline DayRecord synth_day(const PatientProfile& p, int date_index, Rng& rng) {
  DayRecord day;
  day.patient_id = p.id;
  day.date_index = date_index;
  day.label = DayLabel::kRemission;
  day.sleep_onset_min = wrap_minutes(
      p.sleep_onset_mean_min + noise(rng, p.sleep_jitter_min, p.heavy_tailed));
  day.wake_min = wrap_minutes(p.wake_mean_min +
                              noise(rng, p.sleep_jitter_min, p.heavy_tailed));
  const double onset = *day.sleep_onset_min;
  const double wake = *day.wake_min;
  const double awake_span = kMinutesPerDay - sleep_span(onset, wake);

  constexpr double pi = 3.14159265358979323846;
  day.slots.resize(kSlotsPerDay);
  for (int i = 0; i < kSlotsPerDay; ++i) {
    auto& s = day.slots[i];
    s.slot_index = i;
    if (p.missing_rate > 0.0 && rng.uniform() < p.missing_rate) continue;

    const double m = slot_center_minutes(i);
    const double hour = m / 60.0;
    const bool asleep = is_asleep(m, onset, wake);

    double activity;
    if (asleep) {
      activity = std::abs(noise(rng, 0.05 * p.activity_level, p.heavy_tailed));
    } else {
      // single daytime hump over the waking period
      const double since_wake = wrap_minutes(m - wake);
      const double frac = awake_span > 0 ? since_wake / awake_span : 0.5;
      const double shape = 0.35 + 0.65 * std::sin(pi * frac);
      activity = p.activity_level * shape *
                 std::max(0.1, 1.0 + noise(rng, p.activity_noise, p.heavy_tailed));
    }
    s.accel_norm = 0.05 + activity;
    s.gyro_norm = 0.04 + 0.8 * activity +
                  std::abs(noise(rng, 0.02, p.heavy_tailed));
    s.steps = asleep ? 0.0
                     : std::max(0.0, std::round(30.0 * activity +
                                                noise(rng, 4.0, p.heavy_tailed)));
    s.motion_valid = true;

    const double circadian =
        p.circadian_amplitude *
        std::cos(2.0 * pi * (hour - p.circadian_phase_h) / 24.0);
    const double hr = std::max(
        35.0, p.base_hr + circadian + 6.0 * activity + (asleep ? -4.0 : 0.0) +
                  noise(rng, p.hr_noise, p.heavy_tailed));
    s.hr_mean = hr;
    s.rr_mean = 60000.0 / hr * (1.0 + noise(rng, 0.01, p.heavy_tailed));

    const double tone = asleep ? 1.3 : 0.8;  // parasympathetic night lift
    s.rmssd = std::max(
        4.0, p.hrv_level * tone + noise(rng, p.hrv_noise, p.heavy_tailed));
    s.sdnn = std::max(5.0, 1.3 * p.hrv_level * tone +
                               noise(rng, p.hrv_noise, p.heavy_tailed));
    s.hf_lomb_power = std::max(
        1.0, 0.5 * s.rmssd * s.rmssd *
                 (1.0 + noise(rng, 0.1, p.heavy_tailed)));
    s.cardiac_valid = true;
  }
  return day;
}

}  // namespace detail

// Remission-only days for all three splits; bit-identical for a fixed
// (profile, seed).
inline SplitDays generate_patient(const PatientProfile& profile,
                                  int n_train = 200, int n_val = 87,
                                  int n_test = 85, std::uint64_t seed = 0) {
  profile.validate();
  if (n_train <= 0 || n_val <= 0 || n_test <= 0)
    throw std::invalid_argument("generate_patient: day counts must be positive");
  SplitDays out;
  const std::uint64_t patient_seed = derive_seed(seed, hash_str(profile.id));
  int date = 0;
  auto emit = [&](std::vector<DayRecord>& dest, int count, Split split) {
    for (int i = 0; i < count; ++i, ++date) {
      Rng day_rng(derive_seed(patient_seed, hash_str("day"), date));
      auto day = detail::synth_day(profile, date, day_rng);
      day.split = split;
      dest.push_back(std::move(day));
    }
  };
  emit(out.train, n_train, Split::kTrain);
  emit(out.val, n_val, Split::kVal);
  emit(out.test, n_test, Split::kTest);
  return out;
}

// ---------------------------------------------------------------------------
// relapse injection
// ---------------------------------------------------------------------------

struct RelapseRegime {
  int first_day = 0;  // date_index range, inclusive
  int last_day = 0;
  double hrv_suppression = 1.0;      // multiplies RMSSD/SDNN, squared on HF
  double hr_elevation_bpm = 0.0;
  double sleep_shift_min = 0.0;      // rotates the signal timeline
  double sleep_fragmentation = 0.0;  // probability per night bin
  double activity_irregularity = 1.0;

  bool neutral() const {
    return hrv_suppression == 1.0 && hr_elevation_bpm == 0.0 &&
           sleep_shift_min == 0.0 && sleep_fragmentation == 0.0 &&
           activity_irregularity == 1.0;
  }

  void validate() const {
    if (hrv_suppression <= 0.0 || hrv_suppression > 1.0)
      throw std::invalid_argument("regime: hrv_suppression in (0,1]");
    if (sleep_fragmentation < 0.0 || sleep_fragmentation > 1.0)
      throw std::invalid_argument("regime: fragmentation in [0,1]");
    if (activity_irregularity < 1.0)
      throw std::invalid_argument("regime: irregularity factor >= 1");
    if (last_day < first_day)
      throw std::invalid_argument("regime: empty day range");
    if (neutral())
      throw std::invalid_argument("regime: at least one effect must be non-neutral");
  }
};

enum class Severity { kSubtle, kModerate, kSevere };
enum class RegimeVariant { kBalanced, kCardiacDominant, kSleepDominant };

inline std::string to_string(Severity s) {
  switch (s) {
    case Severity::kSubtle: return "subtle";
    case Severity::kModerate: return "moderate";
    case Severity::kSevere: return "severe";
  }
  return "?";
}

inline Severity severity_from_string(const std::string& s) {
  if (s == "subtle") return Severity::kSubtle;
  if (s == "moderate") return Severity::kModerate;
  if (s == "severe") return Severity::kSevere;
  throw std::invalid_argument("unknown severity: '" + s + "'");
}

// Presets probing detector sensitivity. The variant skews the expression
// toward one modality so the two pipelines stay complementary.
inline RelapseRegime severity_regime(Severity severity, int first_day,
                                     int last_day,
                                     RegimeVariant variant = RegimeVariant::kBalanced) {
  RelapseRegime r;
  r.first_day = first_day;
  r.last_day = last_day;
  double supp, elev, shift, frag, irr;
  switch (severity) {
    case Severity::kSubtle:
      supp = 0.85; elev = 3.0; shift = 40.0; frag = 0.10; irr = 1.2;
      break;
    case Severity::kModerate:
      supp = 0.60; elev = 8.0; shift = 110.0; frag = 0.25; irr = 1.6;
      break;
    case Severity::kSevere:
      supp = 0.40; elev = 14.0; shift = 180.0; frag = 0.40; irr = 2.2;
      break;
  }
  switch (variant) {
    case RegimeVariant::kBalanced:
      break;
    case RegimeVariant::kCardiacDominant:
      supp = std::max(0.3, supp - 0.15);
      elev *= 1.5;
      shift *= 0.35;
      frag *= 0.4;
      irr = 1.0 + (irr - 1.0) * 0.5;
      break;
    case RegimeVariant::kSleepDominant:
      supp = std::min(1.0, supp + 0.25);
      elev *= 0.35;
      shift *= 1.5;
      frag = std::min(1.0, frag * 1.8);
      irr = 1.0 + (irr - 1.0) * 1.5;
      break;
  }
  r.hrv_suppression = supp;
  r.hr_elevation_bpm = elev;
  r.sleep_shift_min = shift;
  r.sleep_fragmentation = frag;
  r.activity_irregularity = irr;
  return r;
}

// Applies the regime to the days whose date_index falls in its range:
// relabels them, suppresses HRV, elevates HR (RR follows to keep the
// 60000/HR identity), rotates the signal timeline by the sleep shift,
// fragments night bins, and scrambles daytime activity. Unaffected days
// stay untouched. Days already marked relapse indicate an overlapping
// regime and are rejected.
inline void inject_relapse(std::span<DayRecord> days,
                           const RelapseRegime& regime, std::uint64_t seed) {
  regime.validate();
  int lo = days.empty() ? 0 : days.front().date_index;
  int hi = days.empty() ? -1 : days.back().date_index;
  for (const auto& d : days) {
    lo = std::min(lo, d.date_index);
    hi = std::max(hi, d.date_index);
  }
  if (regime.first_day < lo || regime.last_day > hi)
    throw std::invalid_argument(
        "inject_relapse: regime range [" + std::to_string(regime.first_day) +
        "," + std::to_string(regime.last_day) + "] outside days [" +
        std::to_string(lo) + "," + std::to_string(hi) + "]");

  for (auto& day : days) {
    if (day.date_index < regime.first_day || day.date_index > regime.last_day)
      continue;
    if (day.label == DayLabel::kRelapse)
      throw std::invalid_argument(
          "inject_relapse: day " + std::to_string(day.date_index) +
          " already affected by another regime");
    Rng rng(derive_seed(seed, hash_str(day.patient_id), day.date_index));
    day.label = DayLabel::kRelapse;

    // timeline rotation: the body runs `shift` minutes late
    const int shift_slots =
        static_cast<int>(std::llround(regime.sleep_shift_min / kSlotMinutes));
    if (shift_slots % kSlotsPerDay != 0) {
      std::vector<SlotFeatures> rotated(kSlotsPerDay);
      for (int i = 0; i < kSlotsPerDay; ++i) {
        const int src =
            ((i - shift_slots) % kSlotsPerDay + kSlotsPerDay) % kSlotsPerDay;
        rotated[i] = day.slots[src];
        rotated[i].slot_index = i;
      }
      day.slots = std::move(rotated);
      if (day.sleep_onset_min)
        day.sleep_onset_min =
            detail::wrap_minutes(*day.sleep_onset_min + regime.sleep_shift_min);
      if (day.wake_min)
        day.wake_min =
            detail::wrap_minutes(*day.wake_min + regime.sleep_shift_min);
    }

    const bool has_sleep = day.has_sleep_annotation();
    const double onset = has_sleep ? *day.sleep_onset_min : 0.0;
    const double wake = has_sleep ? *day.wake_min : 0.0;
    for (auto& s : day.slots) {
      if (!s.cardiac_valid && !s.motion_valid) continue;
      const double m = slot_center_minutes(s.slot_index);
      const bool asleep = has_sleep && detail::is_asleep(m, onset, wake);

      if (s.cardiac_valid) {
        s.rmssd *= regime.hrv_suppression;
        s.sdnn *= regime.hrv_suppression;
        s.hf_lomb_power *= regime.hrv_suppression * regime.hrv_suppression;
        const double hr_old = s.hr_mean;
        s.hr_mean += regime.hr_elevation_bpm;
        if (hr_old > 0.0) s.rr_mean *= hr_old / s.hr_mean;
      }
      if (s.motion_valid && !asleep && regime.activity_irregularity > 1.0) {
        const double lg = std::log(regime.activity_irregularity);
        const double f = std::exp(rng.uniform(-lg, lg));
        s.accel_norm *= f;
        s.gyro_norm *= f;
        s.steps = std::round(s.steps * f);
      }
      if (asleep && rng.uniform() < regime.sleep_fragmentation) {
        // awake bout in the night
        if (s.motion_valid) {
          s.accel_norm += 0.6;
          s.gyro_norm += 0.45;
          s.steps += std::round(rng.uniform(10.0, 40.0));
        }
        if (s.cardiac_valid) {
          s.hr_mean += 6.0;
          s.rr_mean *= (s.hr_mean - 6.0) / s.hr_mean;
          s.rmssd *= 0.8;
          s.sdnn *= 0.85;
          s.hf_lomb_power *= 0.64;
        }
      }
    }
  }
}

}  // namespace relapse
