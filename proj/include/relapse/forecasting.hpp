#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <type_traits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "relapse/encoder.hpp"
#include "relapse/features.hpp"
#include "relapse/optim.hpp"
#include "relapse/training.hpp"
#include "relapse/windows.hpp"

// Cardiac-forecasting pipeline: phase 1 trains encoder + predictor head on
// the one-step-ahead objective; phase 2 freezes the encoder and trains an
// ensemble of heads with online resampling; window variance -> day score.

namespace relapse {

inline constexpr int kEnsembleHiddenDim = 64;

// Windows that carry a valid next-step cardiac target, flattened.
template <typename T>
struct ForecastDataset {
  WindowTensors<T> windows;
  std::vector<T> targets;  // count * 5

  ad::TensorPtr<T> target_batch(std::span<const std::int64_t> idx) const {
    return ad::constant<T>({static_cast<std::int64_t>(idx.size()), kNumCardiac},
                           detail::gather_rows<T>(targets, idx, kNumCardiac));
  }
};

// Flattens every target-bearing window of the (normalized) days.
template <typename T>
ForecastDataset<T> build_forecast_dataset(std::span<const DayRecord> days,
                                          int window_size, int stride) {
  ForecastDataset<T> ds;
  ds.windows.len = window_size;
  ds.windows.input_dim = kForecastInputDim;
  for (const auto& day : days) {
    for (const auto& win : make_windows(day, window_size, stride)) {
      if (!win.has_cardiac_target()) continue;
      const std::size_t at = ds.windows.inputs.size();
      ds.windows.inputs.resize(at + static_cast<std::size_t>(window_size) *
                                        kForecastInputDim);
      fill_forecast_inputs(day, win.start, window_size,
                           ds.windows.inputs.data() + at);
      for (double v : *win.cardiac_target)
        ds.targets.push_back(static_cast<T>(v));
      ++ds.windows.count;
    }
  }
  return ds;
}

template <typename T>
Mlp<T> make_forecast_head(std::int64_t d_model, Rng& rng) {
  return Mlp<T>({d_model, kEnsembleHiddenDim, kNumCardiac}, rng);
}

// ---------------------------------------------------------------------------
// phase 1
// ---------------------------------------------------------------------------

struct LossCurve {
  std::vector<double> per_epoch;  // mean training loss
};

template <typename T>
LossCurve train_phase1(TransformerEncoder<T>& encoder, Mlp<T>& head,
                       const ForecastDataset<T>& data, const TrainConfig& tc,
                       std::uint64_t seed) {
  if (data.windows.count == 0)
    throw std::invalid_argument("train_phase1: empty training set");
  std::vector<ad::TensorPtr<T>> params;
  for (auto& [name, p] : encoder.parameters()) params.push_back(p);
  for (auto& [name, p] : head.parameters("head")) params.push_back(p);
  ad::AdamW<T> opt(params, tc.learning_rate, tc.weight_decay);
  Rng shuffle_rng(derive_seed(seed, hash_str("shuffle")));
  Rng dropout_rng(derive_seed(seed, hash_str("dropout")));

  LossCurve curve;
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
      auto y = data.target_batch(bidx);
      auto hidden = encoder.encode(x, static_cast<std::int64_t>(b),
                                   data.windows.len, true, &dropout_rng);
      auto pred = head.forward(encoder.pool(hidden, data.windows.len));
      auto loss = ad::mse_loss(pred, y);
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      epoch_loss += static_cast<double>(loss->value[0]);
      ++batches;
    }
    curve.per_epoch.push_back(epoch_loss / static_cast<double>(batches));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// phase 2: ensemble with online resampling
// ---------------------------------------------------------------------------

// Trains K fresh heads against precomputed frozen-encoder embeddings. All
// heads see the same batch order; independently per head, a fraction of
// each batch is replaced by pairs drawn uniformly from the training set.
template <typename T>
std::vector<Mlp<T>> train_ensemble_on_embeddings(
    std::span<const std::type_identity_t<T>> z, std::int64_t d_model,
    std::span<const std::type_identity_t<T>> targets, std::int64_t out_dim,
    std::span<const std::type_identity_t<T>> row_weights, int k,
    double resample_fraction, const TrainConfig& tc, std::uint64_t base_seed,
    std::span<const std::uint64_t> head_seeds = {}) {
  const std::int64_t count = static_cast<std::int64_t>(z.size()) / d_model;
  if (k < 2)
    throw std::invalid_argument(
        "train_ensemble: K must be >= 2 (variance is head disagreement)");
  if (count == 0) throw std::invalid_argument("train_ensemble: no samples");
  if (resample_fraction < 0.0 || resample_fraction > 1.0)
    throw std::invalid_argument("train_ensemble: resample_fraction in [0,1]");

  std::vector<std::uint64_t> seeds(head_seeds.begin(), head_seeds.end());
  if (seeds.empty())
    for (int h = 0; h < k; ++h)
      seeds.push_back(derive_seed(base_seed, hash_str("head"), h));
  if (static_cast<int>(seeds.size()) != k)
    throw std::invalid_argument("train_ensemble: need one seed per head");

  struct HeadState {
    Mlp<T> mlp;
    std::unique_ptr<ad::AdamW<T>> opt;
    Rng resample_rng;
  };
  std::vector<HeadState> heads;
  heads.reserve(static_cast<std::size_t>(k));
  for (int h = 0; h < k; ++h) {
    Rng init_rng(derive_seed(seeds[h], hash_str("init")));
    HeadState hs{Mlp<T>({d_model, kEnsembleHiddenDim, out_dim}, init_rng),
                 nullptr, Rng(derive_seed(seeds[h], hash_str("resample")))};
    std::vector<ad::TensorPtr<T>> params;
    for (auto& [name, p] : hs.mlp.parameters("head")) params.push_back(p);
    hs.opt = std::make_unique<ad::AdamW<T>>(params, tc.learning_rate,
                                            tc.weight_decay);
    heads.push_back(std::move(hs));
  }

  Rng shuffle_rng(derive_seed(base_seed, hash_str("ensemble-shuffle")));
  auto idx = detail::iota_indices(count);
  std::vector<std::int64_t> head_idx;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    detail::shuffle_indices(idx, shuffle_rng);
    for (std::size_t at = 0; at < idx.size();
         at += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t b =
          std::min<std::size_t>(tc.batch_size, idx.size() - at);
      for (auto& hs : heads) {
        head_idx.assign(idx.begin() + at, idx.begin() + at + b);
        const std::int64_t n_replace = static_cast<std::int64_t>(
            std::llround(resample_fraction * static_cast<double>(b)));
        for (std::int64_t r = 0; r < n_replace; ++r) {
          const auto pos = hs.resample_rng.uniform_int(b);
          head_idx[pos] =
              static_cast<std::int64_t>(hs.resample_rng.uniform_int(count));
        }
        auto zb = ad::constant<T>(
            {static_cast<std::int64_t>(b), d_model},
            detail::gather_rows<T>(z, head_idx, d_model));
        auto yb = ad::constant<T>(
            {static_cast<std::int64_t>(b), out_dim},
            detail::gather_rows<T>(targets, head_idx, out_dim));
        ad::TensorPtr<T> wb;
        if (!row_weights.empty()) {
          std::vector<T> w(b);
          for (std::size_t i = 0; i < b; ++i)
            w[i] = row_weights[head_idx[i]];
          wb = ad::constant<T>({static_cast<std::int64_t>(b)}, std::move(w));
        }
        auto loss = ad::mse_loss(hs.mlp.forward(zb), yb, wb);
        hs.opt->zero_grad();
        ad::backward(loss);
        hs.opt->step();
      }
    }
  }

  std::vector<Mlp<T>> out;
  out.reserve(heads.size());
  for (auto& hs : heads) out.push_back(std::move(hs.mlp));
  return out;
}

template <typename T>
std::vector<Mlp<T>> train_ensemble(const TransformerEncoder<T>& frozen_encoder,
                                   const ForecastDataset<T>& data, int k,
                                   double resample_fraction,
                                   const TrainConfig& tc,
                                   std::uint64_t base_seed,
                                   std::span<const std::uint64_t> head_seeds = {}) {
  const auto z = precompute_embeddings(frozen_encoder, data.windows);
  return train_ensemble_on_embeddings<T>(
      z, frozen_encoder.d_model(), data.targets, kNumCardiac, {}, k,
      resample_fraction, tc, base_seed, head_seeds);
}

// ---------------------------------------------------------------------------
// ensemble statistics (Eqs. 5-7 pattern)
// ---------------------------------------------------------------------------

struct EnsembleStats {
  std::vector<double> mean;      // rows x out_dim, ensemble mean
  std::vector<double> variance;  // rows x out_dim, population (1/K)
  std::vector<double> u;         // rows, variance averaged over out_dim
};

// Aggregates a prediction set: ensemble mean, per-dimension population
// variance (1/K), and their average over the output dimensions.
inline EnsembleStats aggregate_predictions(
    std::span<const std::vector<double>> head_preds, std::int64_t rows,
    std::int64_t out_dim) {
  if (head_preds.empty())
    throw std::invalid_argument("aggregate_predictions: no heads");
  for (const auto& p : head_preds)
    if (static_cast<std::int64_t>(p.size()) != rows * out_dim)
      throw std::invalid_argument("aggregate_predictions: ragged predictions");
  const double k = static_cast<double>(head_preds.size());

  EnsembleStats st;
  st.mean.assign(static_cast<std::size_t>(rows * out_dim), 0.0);
  st.variance.assign(static_cast<std::size_t>(rows * out_dim), 0.0);
  st.u.assign(static_cast<std::size_t>(rows), 0.0);

  for (std::int64_t i = 0; i < rows * out_dim; ++i) {
    double m = 0.0;
    for (const auto& p : head_preds) m += p[i];
    m /= k;
    double v = 0.0;
    for (const auto& p : head_preds) v += (p[i] - m) * (p[i] - m);
    v /= k;
    st.mean[i] = m;
    st.variance[i] = v;
  }
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < out_dim; ++j)
      acc += st.variance[r * out_dim + j];
    st.u[r] = acc / static_cast<double>(out_dim);
  }
  return st;
}

// Mean/variance across heads for each embedding row; u averages the
// per-dimension variance over the head's output dimensions.
template <typename T>
EnsembleStats ensemble_statistics(const std::vector<Mlp<T>>& heads,
                                  std::span<const std::type_identity_t<T>> z,
                                  std::int64_t d_model) {
  if (heads.empty()) throw std::invalid_argument("ensemble_statistics: no heads");
  const std::int64_t rows = static_cast<std::int64_t>(z.size()) / d_model;
  const std::int64_t out_dim = heads[0].output_dim();

  std::vector<std::vector<double>> preds;  // per head: rows x out_dim
  preds.reserve(heads.size());
  auto zt = ad::constant<T>({rows, d_model}, ad::AVec<T>(z.begin(), z.end()));
  for (const auto& head : heads) {
    auto p = head.forward(zt);
    std::vector<double> vals(p->value.size());
    for (std::size_t i = 0; i < vals.size(); ++i)
      vals[i] = static_cast<double>(p->value[i]);
    preds.push_back(std::move(vals));
  }
  return aggregate_predictions(preds, rows, out_dim);
}

// Single-window convenience: (mean, sigma^2, u) for one embedding.
template <typename T>
struct EnsemblePrediction {
  std::vector<double> mean;
  std::vector<double> variance;
  double u = 0.0;
};

template <typename T>
EnsemblePrediction<T> ensemble_predict(std::span<const std::type_identity_t<T>> z_row,
                                       const std::vector<Mlp<T>>& heads) {
  auto st = ensemble_statistics(heads, z_row,
                                static_cast<std::int64_t>(z_row.size()));
  return {std::move(st.mean), std::move(st.variance), st.u[0]};
}

// Day-level score: mean window uncertainty (Eq. 8 pattern). Days with no
// scorable windows are unscorable and excluded upstream.
inline std::optional<double> daily_uncertainty(std::span<const double> window_u) {
  if (window_u.empty()) return std::nullopt;
  double acc = 0.0;
  for (double u : window_u) acc += u;
  return acc / static_cast<double>(window_u.size());
}

}  // namespace relapse
