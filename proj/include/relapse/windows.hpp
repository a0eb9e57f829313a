#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "relapse/features.hpp"

// Sliding-window segmentation of a day and assembly of the per-timestep
// input vectors consumed by the encoders.

namespace relapse {

// floor((288 - window_size) / stride) + 1
inline int window_count(int window_size, int stride) {
  if (window_size < 1 || window_size > kSlotsPerDay)
    throw std::invalid_argument("window_size " + std::to_string(window_size) +
                                " outside [1," + std::to_string(kSlotsPerDay) +
                                "]");
  if (stride < 1)
    throw std::invalid_argument("stride must be >= 1, got " +
                                std::to_string(stride));
  return (kSlotsPerDay - window_size) / stride + 1;
}

struct Window {
  const DayRecord* day = nullptr;
  int start = 0;   // s
  int length = 0;  // L

  // next-step cardiac vector at slot s+L; absent when that slot does not
  // exist or is not cardiac-valid
  std::optional<std::array<double, kNumCardiac>> cardiac_target;
  TimeEmbedding time_target;  // embedding of the final slot's center time
  std::optional<std::pair<TimeEmbedding, TimeEmbedding>> sleep_target;

  bool has_cardiac_target() const { return cardiac_target.has_value(); }
};

// All windows of the day per the count formula; targets attached where they
// exist. Training paths filter on target availability afterwards.
inline std::vector<Window> make_windows(const DayRecord& day, int window_size,
                                        int stride) {
  const int n = window_count(window_size, stride);
  if (day.slots.size() != kSlotsPerDay)
    throw std::invalid_argument("make_windows: day has " +
                                std::to_string(day.slots.size()) +
                                " slots, expected 288");
  std::vector<Window> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int w = 0; w < n; ++w) {
    Window win;
    win.day = &day;
    win.start = w * stride;
    win.length = window_size;
    const int target_slot = win.start + window_size;
    if (target_slot < kSlotsPerDay && day.slots[target_slot].cardiac_valid)
      win.cardiac_target = day.slots[target_slot].cardiac();
    win.time_target =
        time_embedding(slot_center_minutes(win.start + window_size - 1));
    if (day.has_sleep_annotation())
      win.sleep_target = std::make_pair(time_embedding(*day.sleep_onset_min),
                                        time_embedding(*day.wake_min));
    out.push_back(std::move(win));
  }
  return out;
}

// ---------------------------------------------------------------------------
// input assembly
// ---------------------------------------------------------------------------

// forecasting stream: 8 channels + motion/cardiac validity masks
inline constexpr int kForecastInputDim = kNumChannels + 2;
// multi-task stream appends the patient's reference sleep embeddings
inline constexpr int kMultiTaskInputDim = kForecastInputDim + 4;

template <typename T>
void fill_forecast_inputs(const DayRecord& day, int start, int length,
                          T* out) {
  for (int i = 0; i < length; ++i) {
    const auto& slot = day.slots[start + i];
    T* row = out + static_cast<std::ptrdiff_t>(i) * kForecastInputDim;
    for (int c = 0; c < kNumChannels; ++c)
      row[c] = static_cast<T>(slot.channel(c));
    row[kNumChannels] = slot.motion_valid ? T(1) : T(0);
    row[kNumChannels + 1] = slot.cardiac_valid ? T(1) : T(0);
  }
}

// `sleep_input` is the patient-level reference (training-split median) sleep
// onset/wake embedding, not the current day's annotation.
template <typename T>
void fill_multitask_inputs(const DayRecord& day, int start, int length,
                           const std::array<double, 4>& sleep_input, T* out) {
  for (int i = 0; i < length; ++i) {
    const auto& slot = day.slots[start + i];
    T* row = out + static_cast<std::ptrdiff_t>(i) * kMultiTaskInputDim;
    for (int c = 0; c < kNumChannels; ++c)
      row[c] = static_cast<T>(slot.channel(c));
    row[kNumChannels] = slot.motion_valid ? T(1) : T(0);
    row[kNumChannels + 1] = slot.cardiac_valid ? T(1) : T(0);
    for (int j = 0; j < 4; ++j)
      row[kForecastInputDim + j] = static_cast<T>(sleep_input[j]);
  }
}

}  // namespace relapse
