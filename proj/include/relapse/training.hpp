#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "relapse/encoder.hpp"
#include "relapse/rng.hpp"
#include "relapse/tensor.hpp"

// Shared mini-batch machinery: optimizer hyperparameters, portable
// shuffling, batch gathering, and embedding precomputation for the
// frozen-encoder phase.

namespace relapse {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  int batch_size = 16;
  int epochs = 50;
};

namespace detail {

// Fisher-Yates with our own rng so shuffles are identical everywhere.
inline void shuffle_indices(std::vector<std::int64_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
}

inline std::vector<std::int64_t> iota_indices(std::int64_t n) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// rows[i] <- src[idx[i]] where each row is `width` wide
template <typename T>
ad::AVec<T> gather_rows(std::span<const T> src,
                        std::span<const std::int64_t> idx,
                        std::int64_t width) {
  ad::AVec<T> out(idx.size() * static_cast<std::size_t>(width));
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(src.data() + idx[i] * width, width, out.data() + i * width);
  return out;
}

}  // namespace detail

// Window-level tensors for one pipeline: per-window inputs plus however
// many target matrices the task needs.
template <typename T>
struct WindowTensors {
  std::int64_t count = 0;
  std::int64_t len = 0;        // L
  std::int64_t input_dim = 0;  // d
  std::vector<T> inputs;       // count * len * input_dim

  std::int64_t input_row_width() const { return len * input_dim; }

  ad::TensorPtr<T> input_batch(std::span<const std::int64_t> idx) const {
    auto rows = detail::gather_rows<T>(inputs, idx, input_row_width());
    return ad::constant<T>(
        {static_cast<std::int64_t>(idx.size()) * len, input_dim},
        std::move(rows));
  }
};

// Embeddings of every window under a frozen encoder, computed in eval mode
// (dropout off) in batches.
template <typename T>
std::vector<T> precompute_embeddings(const TransformerEncoder<T>& encoder,
                                     const WindowTensors<T>& data,
                                     std::int64_t batch_size = 64) {
  const std::int64_t d = encoder.d_model();
  std::vector<T> z(static_cast<std::size_t>(data.count * d));
  for (std::int64_t start = 0; start < data.count; start += batch_size) {
    const std::int64_t b = std::min(batch_size, data.count - start);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(b));
    std::iota(idx.begin(), idx.end(), start);
    auto x = data.input_batch(idx);
    auto pooled = encoder.pool(encoder.encode(x, b, data.len), data.len);
    std::copy(pooled->value.begin(), pooled->value.end(),
              z.begin() + start * d);
  }
  return z;
}

}  // namespace relapse
