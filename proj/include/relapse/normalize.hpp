#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "relapse/features.hpp"

// Per-patient, per-channel z-scoring fitted on the training split only.

namespace relapse {

struct ChannelStats {
  std::array<double, kNumChannels> mean{};
  std::array<double, kNumChannels> stddev{};   // 1.0 where degenerate
  std::array<bool, kNumChannels> centered_only{};
  std::array<bool, kNumChannels> flagged{};    // no valid training bins

  bool operator==(const ChannelStats&) const = default;
};

inline constexpr double kDegenerateStd = 1e-8;

// Mean/std (population) over valid bins of the given days; motion channels
// use the motion mask, cardiac channels the cardiac mask.
inline ChannelStats fit_channel_stats(std::span<const DayRecord> train_days) {
  if (train_days.empty())
    throw std::invalid_argument("fit_channel_stats: no training days");
  ChannelStats st;
  for (int c = 0; c < kNumChannels; ++c) {
    double sum = 0.0, sum2 = 0.0;
    std::int64_t n = 0;
    for (const auto& day : train_days) {
      for (const auto& slot : day.slots) {
        const bool ok =
            channel_is_cardiac(c) ? slot.cardiac_valid : slot.motion_valid;
        if (!ok) continue;
        const double v = slot.channel(c);
        sum += v;
        sum2 += v * v;
        ++n;
      }
    }
    if (n == 0) {
      st.flagged[c] = true;
      st.mean[c] = 0.0;
      st.stddev[c] = 1.0;
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
    const double sd = std::sqrt(var);
    st.mean[c] = mean;
    if (sd < kDegenerateStd) {
      st.stddev[c] = 1.0;
      st.centered_only[c] = true;
    } else {
      st.stddev[c] = sd;
    }
  }
  return st;
}

// z-scores every channel in place; invalid or flagged channels become the
// post-normalization placeholder 0.
inline void apply_normalization(DayRecord& day, const ChannelStats& st) {
  for (auto& slot : day.slots) {
    for (int c = 0; c < kNumChannels; ++c) {
      const bool ok =
          channel_is_cardiac(c) ? slot.cardiac_valid : slot.motion_valid;
      if (!ok || st.flagged[c]) {
        slot.set_channel(c, 0.0);
        continue;
      }
      slot.set_channel(c, (slot.channel(c) - st.mean[c]) / st.stddev[c]);
    }
  }
}

struct NormalizedDays {
  std::vector<DayRecord> days;
  ChannelStats stats;
};

// Training-split statistics applied to every day (no leakage from val/test).
inline NormalizedDays normalize_features(std::span<const DayRecord> train_days,
                                         std::span<const DayRecord> all_days) {
  NormalizedDays out;
  out.stats = fit_channel_stats(train_days);
  out.days.assign(all_days.begin(), all_days.end());
  for (auto& day : out.days) apply_normalization(day, out.stats);
  return out;
}

}  // namespace relapse
