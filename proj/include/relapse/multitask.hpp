#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "relapse/forecasting.hpp"

// Multi-task pipeline: predicts the measurement-time embedding of each
// window with an auxiliary sleep-embedding head, both reading the pooled
// window embedding. Day score combines the two head variances 0.7/0.3.

namespace relapse {

inline constexpr std::int64_t kTimeTargetDim = 2;
inline constexpr std::int64_t kSleepTargetDim = 4;

inline constexpr double kDefaultTimeVarianceWeight = 0.7;
inline constexpr double kDefaultSleepVarianceWeight = 0.3;

// Circular mean/median helpers for minutes-of-day quantities that may wrap
// around midnight.
inline double circular_mean_minutes(std::span<const double> minutes) {
  if (minutes.empty())
    throw std::invalid_argument("circular_mean_minutes: empty input");
  constexpr double two_pi = 6.283185307179586476925286766559;
  double s = 0.0, c = 0.0;
  for (double m : minutes) {
    const double phase = two_pi * m / kMinutesPerDay;
    s += std::sin(phase);
    c += std::cos(phase);
  }
  double mins = std::atan2(s, c) / two_pi * kMinutesPerDay;
  if (mins < 0.0) mins += kMinutesPerDay;
  return mins;
}

// Median after unwrapping around the circular mean, so values straddling
// midnight stay adjacent.
inline double circular_median_minutes(std::span<const double> minutes) {
  const double center = circular_mean_minutes(minutes);
  std::vector<double> unwrapped;
  unwrapped.reserve(minutes.size());
  for (double m : minutes) {
    double d = m - center;
    while (d < -kMinutesPerDay / 2.0) d += kMinutesPerDay;
    while (d >= kMinutesPerDay / 2.0) d -= kMinutesPerDay;
    unwrapped.push_back(d);
  }
  std::sort(unwrapped.begin(), unwrapped.end());
  const std::size_t n = unwrapped.size();
  const double med = n % 2 ? unwrapped[n / 2]
                           : 0.5 * (unwrapped[n / 2 - 1] + unwrapped[n / 2]);
  double out = center + med;
  while (out < 0.0) out += kMinutesPerDay;
  while (out >= kMinutesPerDay) out -= kMinutesPerDay;
  return out;
}

// Patient-level reference sleep embedding appended to every input timestep:
// the training-split median onset/wake, not the current day's annotation
// (which appears only as a target).
inline std::array<double, 4> reference_sleep_input(
    std::span<const DayRecord> train_days) {
  std::vector<double> onsets, wakes;
  for (const auto& day : train_days) {
    if (!day.has_sleep_annotation()) continue;
    onsets.push_back(*day.sleep_onset_min);
    wakes.push_back(*day.wake_min);
  }
  if (onsets.empty()) return {0.0, 0.0, 0.0, 0.0};  // neutral: no annotations
  const auto onset = time_embedding(circular_median_minutes(onsets));
  const auto wake = time_embedding(circular_median_minutes(wakes));
  return {onset.sin_c, onset.cos_c, wake.sin_c, wake.cos_c};
}

// Windows with time targets always present; sleep targets masked out for
// days lacking annotations.
template <typename T>
struct MultiTaskDataset {
  WindowTensors<T> windows;
  std::vector<T> time_targets;   // count * 2
  std::vector<T> sleep_targets;  // count * 4 (zeros where masked)
  std::vector<T> sleep_mask;     // count, 1 or 0

  ad::TensorPtr<T> time_batch(std::span<const std::int64_t> idx) const {
    return ad::constant<T>({static_cast<std::int64_t>(idx.size()), kTimeTargetDim},
                           detail::gather_rows<T>(time_targets, idx, kTimeTargetDim));
  }
  ad::TensorPtr<T> sleep_batch(std::span<const std::int64_t> idx) const {
    return ad::constant<T>({static_cast<std::int64_t>(idx.size()), kSleepTargetDim},
                           detail::gather_rows<T>(sleep_targets, idx, kSleepTargetDim));
  }
  ad::TensorPtr<T> mask_batch(std::span<const std::int64_t> idx) const {
    return ad::constant<T>({static_cast<std::int64_t>(idx.size())},
                           detail::gather_rows<T>(sleep_mask, idx, 1));
  }
};

// Both input streams per timestep: the 8+2 physiological/activity channels
// and the patient's reference sleep embeddings.
template <typename T>
MultiTaskDataset<T> build_streams(std::span<const DayRecord> days,
                                  const std::array<double, 4>& sleep_input,
                                  int window_size, int stride) {
  MultiTaskDataset<T> ds;
  ds.windows.len = window_size;
  ds.windows.input_dim = kMultiTaskInputDim;
  for (const auto& day : days) {
    for (const auto& win : make_windows(day, window_size, stride)) {
      const std::size_t at = ds.windows.inputs.size();
      ds.windows.inputs.resize(at + static_cast<std::size_t>(window_size) *
                                        kMultiTaskInputDim);
      fill_multitask_inputs(day, win.start, window_size, sleep_input,
                            ds.windows.inputs.data() + at);
      ds.time_targets.push_back(static_cast<T>(win.time_target.sin_c));
      ds.time_targets.push_back(static_cast<T>(win.time_target.cos_c));
      if (win.sleep_target) {
        ds.sleep_targets.push_back(static_cast<T>(win.sleep_target->first.sin_c));
        ds.sleep_targets.push_back(static_cast<T>(win.sleep_target->first.cos_c));
        ds.sleep_targets.push_back(static_cast<T>(win.sleep_target->second.sin_c));
        ds.sleep_targets.push_back(static_cast<T>(win.sleep_target->second.cos_c));
        ds.sleep_mask.push_back(T(1));
      } else {
        for (int j = 0; j < 4; ++j) ds.sleep_targets.push_back(T(0));
        ds.sleep_mask.push_back(T(0));
      }
      ++ds.windows.count;
    }
  }
  return ds;
}

template <typename T>
Mlp<T> make_time_head(std::int64_t d_model, Rng& rng) {
  return Mlp<T>({d_model, kEnsembleHiddenDim, kTimeTargetDim}, rng);
}

template <typename T>
Mlp<T> make_sleep_head(std::int64_t d_model, Rng& rng) {
  return Mlp<T>({d_model, kEnsembleHiddenDim, kSleepTargetDim}, rng);
}

struct MultiTaskTrainResult {
  LossCurve total;
  bool sleep_branch_active = true;
};

// Joint objective: MSE(time) + lambda * masked MSE(sleep). The mask zeroes
// the error rows of unannotated days rather than pulling predictions to 0.
template <typename T>
MultiTaskTrainResult train_multitask(TransformerEncoder<T>& encoder,
                                     Mlp<T>& time_head, Mlp<T>& sleep_head,
                                     const MultiTaskDataset<T>& data,
                                     const TrainConfig& tc, std::uint64_t seed,
                                     double sleep_loss_weight = 1.0) {
  if (data.windows.count == 0)
    throw std::invalid_argument("train_multitask: empty training set");
  MultiTaskTrainResult result;
  {
    bool any_mask = false;
    for (const auto m : data.sleep_mask)
      if (m != T(0)) any_mask = true;
    if (!any_mask) {
      result.sleep_branch_active = false;
      std::cerr << "warning: no sleep annotations in training split; "
                   "multi-task model degenerates to time-only\n";
    }
  }

  std::vector<ad::TensorPtr<T>> params;
  for (auto& [name, p] : encoder.parameters()) params.push_back(p);
  for (auto& [name, p] : time_head.parameters("time_head")) params.push_back(p);
  for (auto& [name, p] : sleep_head.parameters("sleep_head")) params.push_back(p);
  ad::AdamW<T> opt(params, tc.learning_rate, tc.weight_decay);
  Rng shuffle_rng(derive_seed(seed, hash_str("shuffle")));
  Rng dropout_rng(derive_seed(seed, hash_str("dropout")));

  auto idx = detail::iota_indices(data.windows.count);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    detail::shuffle_indices(idx, shuffle_rng);
    double epoch_loss = 0.0;
    std::int64_t batches = 0;
    for (std::size_t at = 0; at < idx.size();
         at += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t b =
          std::min<std::size_t>(tc.batch_size, idx.size() - at);
      std::span<const std::int64_t> bidx(idx.data() + at, b);
      auto x = data.windows.input_batch(bidx);
      auto hidden = encoder.encode(x, static_cast<std::int64_t>(b),
                                   data.windows.len, true, &dropout_rng);
      auto z = encoder.pool(hidden, data.windows.len);
      auto loss = ad::mse_loss(time_head.forward(z), data.time_batch(bidx));
      if (sleep_loss_weight != 0.0) {
        auto sleep_loss = ad::mse_loss(sleep_head.forward(z),
                                       data.sleep_batch(bidx),
                                       data.mask_batch(bidx));
        loss = ad::add(loss, ad::scale(sleep_loss,
                                       static_cast<T>(sleep_loss_weight)));
      }
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      epoch_loss += static_cast<double>(loss->value[0]);
      ++batches;
    }
    result.total.per_epoch.push_back(epoch_loss /
                                     static_cast<double>(batches));
  }
  return result;
}

template <typename T>
struct MultiTaskHeads {
  std::vector<Mlp<T>> time_heads;
  std::vector<Mlp<T>> sleep_heads;
};

// Phase 2 for the multi-task pipeline, run once per head type.
template <typename T>
MultiTaskHeads<T> train_multitask_ensemble(
    const TransformerEncoder<T>& frozen_encoder,
    const MultiTaskDataset<T>& data, int k, double resample_fraction,
    const TrainConfig& tc, std::uint64_t base_seed) {
  const auto z = precompute_embeddings(frozen_encoder, data.windows);
  MultiTaskHeads<T> out;
  out.time_heads = train_ensemble_on_embeddings<T>(
      z, frozen_encoder.d_model(), data.time_targets, kTimeTargetDim, {}, k,
      resample_fraction, tc, derive_seed(base_seed, hash_str("time")));
  out.sleep_heads = train_ensemble_on_embeddings<T>(
      z, frozen_encoder.d_model(), data.sleep_targets, kSleepTargetDim,
      data.sleep_mask, k, resample_fraction, tc,
      derive_seed(base_seed, hash_str("sleep")));
  return out;
}

struct CombinedDayVariance {
  double v_time = 0.0;
  double v_sleep = 0.0;
  double combined = 0.0;
};

// combined = w_time * V_time + w_sleep * V_sleep over the day's windows
inline std::optional<CombinedDayVariance> multitask_day_score(
    std::span<const double> window_time_var,
    std::span<const double> window_sleep_var,
    double time_weight = kDefaultTimeVarianceWeight,
    double sleep_weight = kDefaultSleepVarianceWeight) {
  if (window_time_var.size() != window_sleep_var.size())
    throw std::invalid_argument("multitask_day_score: window count mismatch");
  const auto v_time = daily_uncertainty(window_time_var);
  const auto v_sleep = daily_uncertainty(window_sleep_var);
  if (!v_time || !v_sleep) return std::nullopt;  // unscorable day
  CombinedDayVariance out;
  out.v_time = *v_time;
  out.v_sleep = *v_sleep;
  out.combined = time_weight * out.v_time + sleep_weight * out.v_sleep;
  return out;
}

}  // namespace relapse
