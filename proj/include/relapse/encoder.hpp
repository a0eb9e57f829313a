#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relapse/nn.hpp"
#include "relapse/optim.hpp"
#include "relapse/positional.hpp"
#include "relapse/rng.hpp"
#include "relapse/tensor.hpp"

// Pre-norm Transformer encoder over fixed-length windows, with pluggable
// positional information: additive sinusoids, rotary query/key rotation, or
// a linear distance bias on attention scores.

namespace relapse {

enum class PositionalMode { kSinusoidal, kRope, kAlibi };

inline std::string to_string(PositionalMode m) {
  switch (m) {
    case PositionalMode::kSinusoidal: return "sinusoidal";
    case PositionalMode::kRope: return "rope";
    case PositionalMode::kAlibi: return "alibi";
  }
  return "?";
}

inline PositionalMode positional_mode_from_string(const std::string& s) {
  if (s == "sinusoidal") return PositionalMode::kSinusoidal;
  if (s == "rope") return PositionalMode::kRope;
  if (s == "alibi") return PositionalMode::kAlibi;
  throw std::invalid_argument("unknown positional mode: '" + s +
                              "' (expected sinusoidal|rope|alibi)");
}

struct EncoderConfig {
  std::int64_t d_model = 64;
  std::int64_t n_heads = 4;
  std::int64_t n_layers = 2;
  std::int64_t ffn_dim = 128;
  double dropout_rate = 0.1;
  PositionalMode positional_mode = PositionalMode::kSinusoidal;

  std::int64_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || ffn_dim <= 0)
      throw std::invalid_argument("encoder config: dimensions must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("encoder config: d_model " +
                                  std::to_string(d_model) +
                                  " not divisible by n_heads " +
                                  std::to_string(n_heads));
    if (positional_mode == PositionalMode::kRope && head_dim() % 2 != 0)
      throw std::invalid_argument("encoder config: rope needs even head_dim");
    if (positional_mode == PositionalMode::kSinusoidal && d_model % 2 != 0)
      throw std::invalid_argument("encoder config: sinusoidal needs even d_model");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw std::invalid_argument("encoder config: dropout must be in [0,1)");
  }

  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct NamedParam {
  std::string name;
  ad::TensorPtr<T> tensor;
};

namespace detail {

// Xavier fan-based init for a weight matrix.
template <typename T>
ad::TensorPtr<T> xavier(std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return ad::param_normal<T>({fan_in, fan_out}, rng, stddev);
}

}  // namespace detail

// Feed-forward stack with ReLU between layers; used for all predictor heads.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<std::int64_t>& dims, Rng& rng) {
    if (dims.size() < 2)
      throw std::invalid_argument("mlp: need at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      weights_.push_back(detail::xavier<T>(dims[i], dims[i + 1], rng));
      biases_.push_back(ad::param_zeros<T>({dims[i + 1]}));
    }
  }

  ad::TensorPtr<T> forward(const ad::TensorPtr<T>& x) const {
    auto h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = ad::add_bias(ad::matmul(h, weights_[i]), biases_[i]);
      if (i + 1 < weights_.size()) h = ad::relu(h);
    }
    return h;
  }

  std::vector<NamedParam<T>> parameters(const std::string& prefix) const {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      out.push_back({prefix + ".l" + std::to_string(i) + ".w", weights_[i]});
      out.push_back({prefix + ".l" + std::to_string(i) + ".b", biases_[i]});
    }
    return out;
  }

  std::int64_t output_dim() const { return weights_.back()->shape[1]; }

 private:
  std::vector<ad::TensorPtr<T>> weights_;
  std::vector<ad::TensorPtr<T>> biases_;
};

template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;

  TransformerEncoder(EncoderConfig cfg, std::int64_t input_dim, Rng& rng)
      : cfg_(cfg), input_dim_(input_dim) {
    cfg_.validate();
    w_in_ = detail::xavier<T>(input_dim, cfg_.d_model, rng);
    b_in_ = ad::param_zeros<T>({cfg_.d_model});
    layers_.resize(cfg_.n_layers);
    for (auto& l : layers_) {
      l.wq = detail::xavier<T>(cfg_.d_model, cfg_.d_model, rng);
      l.wk = detail::xavier<T>(cfg_.d_model, cfg_.d_model, rng);
      l.wv = detail::xavier<T>(cfg_.d_model, cfg_.d_model, rng);
      l.wo = detail::xavier<T>(cfg_.d_model, cfg_.d_model, rng);
      l.bq = ad::param_zeros<T>({cfg_.d_model});
      l.bk = ad::param_zeros<T>({cfg_.d_model});
      l.bv = ad::param_zeros<T>({cfg_.d_model});
      l.bo = ad::param_zeros<T>({cfg_.d_model});
      l.ln1_g = ad::param_ones<T>({cfg_.d_model});
      l.ln1_b = ad::param_zeros<T>({cfg_.d_model});
      l.ln2_g = ad::param_ones<T>({cfg_.d_model});
      l.ln2_b = ad::param_zeros<T>({cfg_.d_model});
      l.w1 = detail::xavier<T>(cfg_.d_model, cfg_.ffn_dim, rng);
      l.b1 = ad::param_zeros<T>({cfg_.ffn_dim});
      l.w2 = detail::xavier<T>(cfg_.ffn_dim, cfg_.d_model, rng);
      l.b2 = ad::param_zeros<T>({cfg_.d_model});
    }
    lnf_g_ = ad::param_ones<T>({cfg_.d_model});
    lnf_b_ = ad::param_zeros<T>({cfg_.d_model});
  }

  // x: (batch*len, input_dim). Returns per-timestep hidden states
  // (batch*len, d_model). `rng` is only consumed when training (dropout).
  ad::TensorPtr<T> encode(const ad::TensorPtr<T>& x, std::int64_t batch,
                          std::int64_t len, bool training = false,
                          Rng* rng = nullptr) const {
    if (len < 1) throw std::invalid_argument("encode: window length must be >= 1");
    if (x->shape.size() != 2 || x->shape[0] != batch * len ||
        x->shape[1] != input_dim_)
      throw std::invalid_argument("encode: input shape " +
                                  ad::shape_str(x->shape) + " does not match " +
                                  std::to_string(batch * len) + "x" +
                                  std::to_string(input_dim_));
    const bool drop = training && cfg_.dropout_rate > 0.0;
    if (drop && !rng)
      throw std::invalid_argument("encode: training mode needs an rng");

    auto h = ad::add_bias(ad::matmul(x, w_in_), b_in_);
    ad::TensorPtr<T> pe_tile;
    if (cfg_.positional_mode == PositionalMode::kSinusoidal) {
      auto pe = sinusoidal_pe<T>(len, cfg_.d_model);
      std::vector<T> tiled(static_cast<std::size_t>(batch) * pe.size());
      for (std::int64_t b = 0; b < batch; ++b)
        std::copy(pe.begin(), pe.end(), tiled.begin() + b * pe.size());
      pe_tile = ad::constant<T>({batch * len, cfg_.d_model}, std::move(tiled));
      h = ad::add(h, pe_tile);
    }
    RopeTables<T> rope;
    std::vector<T> alibi;
    if (cfg_.positional_mode == PositionalMode::kRope)
      rope = make_rope_tables<T>(len, head_dim());
    if (cfg_.positional_mode == PositionalMode::kAlibi)
      alibi = alibi_bias<T>(len, cfg_.n_heads);

    for (const auto& l : layers_) {
      auto a = ad::layer_norm(h, l.ln1_g, l.ln1_b);
      auto q = ad::add_bias(ad::matmul(a, l.wq), l.bq);
      auto k = ad::add_bias(ad::matmul(a, l.wk), l.bk);
      auto v = ad::add_bias(ad::matmul(a, l.wv), l.bv);
      auto att = ad::self_attention(
          q, k, v, batch, len, cfg_.n_heads,
          cfg_.positional_mode == PositionalMode::kRope ? &rope : nullptr,
          cfg_.positional_mode == PositionalMode::kAlibi ? &alibi : nullptr);
      att = ad::add_bias(ad::matmul(att, l.wo), l.bo);
      if (drop) att = ad::dropout(att, cfg_.dropout_rate, *rng, true);
      h = ad::add(h, att);
      auto f = ad::layer_norm(h, l.ln2_g, l.ln2_b);
      f = ad::add_bias(ad::matmul(f, l.w1), l.b1);
      f = ad::gelu(f);
      f = ad::add_bias(ad::matmul(f, l.w2), l.b2);
      if (drop) f = ad::dropout(f, cfg_.dropout_rate, *rng, true);
      h = ad::add(h, f);
    }
    return ad::layer_norm(h, lnf_g_, lnf_b_);
  }

  // Window embedding z: mean over the time axis, (batch*len, d) -> (batch, d).
  ad::TensorPtr<T> pool(const ad::TensorPtr<T>& hidden, std::int64_t len) const {
    return ad::mean_pool_rows(hidden, len);
  }

  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    out.push_back({"input.w", w_in_});
    out.push_back({"input.b", b_in_});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const std::string p = "layer" + std::to_string(i);
      out.push_back({p + ".ln1.g", l.ln1_g});
      out.push_back({p + ".ln1.b", l.ln1_b});
      out.push_back({p + ".attn.wq", l.wq});
      out.push_back({p + ".attn.bq", l.bq});
      out.push_back({p + ".attn.wk", l.wk});
      out.push_back({p + ".attn.bk", l.bk});
      out.push_back({p + ".attn.wv", l.wv});
      out.push_back({p + ".attn.bv", l.bv});
      out.push_back({p + ".attn.wo", l.wo});
      out.push_back({p + ".attn.bo", l.bo});
      out.push_back({p + ".ln2.g", l.ln2_g});
      out.push_back({p + ".ln2.b", l.ln2_b});
      out.push_back({p + ".ffn.w1", l.w1});
      out.push_back({p + ".ffn.b1", l.b1});
      out.push_back({p + ".ffn.w2", l.w2});
      out.push_back({p + ".ffn.b2", l.b2});
    }
    out.push_back({"final_ln.g", lnf_g_});
    out.push_back({"final_ln.b", lnf_b_});
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }
  std::int64_t input_dim() const { return input_dim_; }
  std::int64_t d_model() const { return cfg_.d_model; }
  std::int64_t head_dim() const { return cfg_.head_dim(); }

 private:
  struct Layer {
    ad::TensorPtr<T> wq, wk, wv, wo, bq, bk, bv, bo;
    ad::TensorPtr<T> ln1_g, ln1_b, ln2_g, ln2_b;
    ad::TensorPtr<T> w1, b1, w2, b2;
  };

  EncoderConfig cfg_;
  std::int64_t input_dim_ = 0;
  ad::TensorPtr<T> w_in_, b_in_;
  std::vector<Layer> layers_;
  ad::TensorPtr<T> lnf_g_, lnf_b_;
};

}  // namespace relapse
