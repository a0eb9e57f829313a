#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

// Positional encodings for the encoder: fixed sinusoids added to the
// projected input, rotary rotations applied to queries/keys, and the
// distance-penalty attention bias.

namespace relapse {

// pe[pos, 2i] = sin(pos / 10000^(2i/d)), pe[pos, 2i+1] = cos(...)
template <typename T>
std::vector<T> sinusoidal_pe(std::int64_t len, std::int64_t d_model) {
  if (d_model <= 0 || d_model % 2 != 0)
    throw std::invalid_argument("sinusoidal_pe: d_model must be positive even");
  std::vector<T> pe(static_cast<std::size_t>(len * d_model));
  for (std::int64_t pos = 0; pos < len; ++pos) {
    for (std::int64_t i = 0; 2 * i < d_model; ++i) {
      const double wavelen =
          std::pow(10000.0, 2.0 * static_cast<double>(i) / d_model);
      const double angle = static_cast<double>(pos) / wavelen;
      pe[pos * d_model + 2 * i] = static_cast<T>(std::sin(angle));
      pe[pos * d_model + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

// Rotary tables: cos/sin of pos * 10000^(-2j/head_dim) per coordinate pair j.
template <typename T>
struct RopeTables {
  std::int64_t len = 0;
  std::int64_t half = 0;  // head_dim / 2
  std::vector<T> cos_t;   // len x half
  std::vector<T> sin_t;
};

template <typename T>
RopeTables<T> make_rope_tables(std::int64_t len, std::int64_t head_dim) {
  if (head_dim <= 0 || head_dim % 2 != 0)
    throw std::invalid_argument("rope: head_dim must be positive even");
  RopeTables<T> t;
  t.len = len;
  t.half = head_dim / 2;
  t.cos_t.resize(static_cast<std::size_t>(len * t.half));
  t.sin_t.resize(static_cast<std::size_t>(len * t.half));
  for (std::int64_t pos = 0; pos < len; ++pos) {
    for (std::int64_t j = 0; j < t.half; ++j) {
      const double theta =
          static_cast<double>(pos) *
          std::pow(10000.0, -2.0 * static_cast<double>(j) / head_dim);
      t.cos_t[pos * t.half + j] = static_cast<T>(std::cos(theta));
      t.sin_t[pos * t.half + j] = static_cast<T>(std::sin(theta));
    }
  }
  return t;
}

// In-place pairwise rotation of one head-dim row by the given angle tables.
template <typename T>
void rope_apply_row(T* row, const T* cos_row, const T* sin_row,
                    std::int64_t half) {
  for (std::int64_t j = 0; j < half; ++j) {
    const T a = row[2 * j], b = row[2 * j + 1];
    row[2 * j] = a * cos_row[j] - b * sin_row[j];
    row[2 * j + 1] = a * sin_row[j] + b * cos_row[j];
  }
}

// Inverse rotation (the adjoint of rope_apply_row).
template <typename T>
void rope_apply_row_inverse(T* row, const T* cos_row, const T* sin_row,
                            std::int64_t half) {
  for (std::int64_t j = 0; j < half; ++j) {
    const T a = row[2 * j], b = row[2 * j + 1];
    row[2 * j] = a * cos_row[j] + b * sin_row[j];
    row[2 * j + 1] = -a * sin_row[j] + b * cos_row[j];
  }
}

// Rotates a query/key vector at `pos`; norm-preserving by construction.
template <typename T>
void rope_rotate(std::span<T> vec, std::int64_t pos) {
  const std::int64_t dim = static_cast<std::int64_t>(vec.size());
  if (dim % 2 != 0)
    throw std::invalid_argument("rope_rotate: head_dim must be even");
  for (std::int64_t j = 0; 2 * j < dim; ++j) {
    const double theta =
        static_cast<double>(pos) *
        std::pow(10000.0, -2.0 * static_cast<double>(j) / dim);
    const T c = static_cast<T>(std::cos(theta));
    const T s = static_cast<T>(std::sin(theta));
    const T a = vec[2 * j], b = vec[2 * j + 1];
    vec[2 * j] = a * c - b * s;
    vec[2 * j + 1] = a * s + b * c;
  }
}

// Head h (1-indexed) gets slope 2^(-8h/n_heads).
inline std::vector<double> alibi_slopes(std::int64_t n_heads) {
  if (n_heads < 1) throw std::invalid_argument("alibi: n_heads must be >= 1");
  std::vector<double> s(static_cast<std::size_t>(n_heads));
  for (std::int64_t h = 0; h < n_heads; ++h)
    s[h] = std::pow(2.0, -8.0 * static_cast<double>(h + 1) / n_heads);
  return s;
}

// bias[h, i, j] = -slope_h * |i - j|; symmetric, zero diagonal.
template <typename T>
std::vector<T> alibi_bias(std::int64_t len, std::int64_t n_heads) {
  const auto slopes = alibi_slopes(n_heads);
  std::vector<T> bias(static_cast<std::size_t>(n_heads * len * len));
  for (std::int64_t h = 0; h < n_heads; ++h)
    for (std::int64_t i = 0; i < len; ++i)
      for (std::int64_t j = 0; j < len; ++j)
        bias[(h * len + i) * len + j] =
            static_cast<T>(-slopes[h] * std::abs(static_cast<double>(i - j)));
  return bias;
}

}  // namespace relapse
