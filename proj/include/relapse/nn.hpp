#pragma once

#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "relapse/positional.hpp"
#include "relapse/rng.hpp"
#include "relapse/tensor.hpp"

// Neural-net ops on top of the autodiff core: activations, layer norm,
// row softmax, dropout, and fused bidirectional multi-head self-attention.

namespace relapse::ad {

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
  auto out = detail::make_result<T>(x->shape, {x});
  out->mat() = x->mat().cwiseMax(T(0));
  if (out->requires_grad)
    out->backward_fn = [](Tensor<T>& self) {
      auto& x_ = *self.parents[0];
      for (std::int64_t i = 0; i < self.size(); ++i)
        if (x_.value[i] > T(0)) x_.grad[i] += self.grad[i];
    };
  return out;
}

namespace detail {

template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

}  // namespace detail

// exact GELU: 0.5 x (1 + erf(x / sqrt(2)))
template <typename T>
TensorPtr<T> gelu(const TensorPtr<T>& x) {
  auto out = detail::make_result<T>(x->shape, {x});
  detail::CArrMap<T> xa(x->value.data(), x->size());
  detail::ArrMap<T> ya(out->value.data(), out->size());
  ya = T(0.5) * xa * (T(1) + (xa * T(0.7071067811865475)).erf());
  if (out->requires_grad)
    out->backward_fn = [](Tensor<T>& self) {
      auto& x_ = *self.parents[0];
      detail::CArrMap<T> xa(x_.value.data(), x_.size());
      detail::CArrMap<T> dy(self.grad.data(), self.size());
      detail::ArrMap<T> dx(x_.grad.data(), x_.size());
      auto cdf = T(0.5) * (T(1) + (xa * T(0.7071067811865475)).erf());
      auto pdf = T(0.3989422804014327) * (T(-0.5) * xa * xa).exp();
      dx += dy * (cdf + xa * pdf);
    };
  return out;
}

// Row-wise layer norm with learned gain/bias; population variance + eps.
template <typename T>
TensorPtr<T> layer_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, T eps = T(1e-5)) {
  if (x->shape.size() != 2 || gamma->shape.size() != 1 ||
      x->shape[1] != gamma->shape[0] || gamma->shape != beta->shape)
    throw std::invalid_argument("layer_norm: shape mismatch: " +
                                shape_str(x->shape) + " vs " +
                                shape_str(gamma->shape));
  const std::int64_t m = x->shape[0], n = x->shape[1];
  auto out = detail::make_result<T>(x->shape, {x, gamma, beta});

  struct Ctx {
    std::vector<T> xhat;
    std::vector<T> inv_std;
  };
  auto ctx = std::make_shared<Ctx>();
  ctx->xhat.resize(static_cast<std::size_t>(m * n));
  ctx->inv_std.resize(static_cast<std::size_t>(m));

  detail::CArrMap<T> ga(gamma->value.data(), n);
  detail::CArrMap<T> ba(beta->value.data(), n);
  for (std::int64_t i = 0; i < m; ++i) {
    detail::CArrMap<T> row(x->value.data() + i * n, n);
    detail::ArrMap<T> xh(ctx->xhat.data() + i * n, n);
    detail::ArrMap<T> y(out->value.data() + i * n, n);
    const T mean = row.mean();
    const T var = (row - mean).square().sum() / static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    ctx->inv_std[i] = inv;
    xh = (row - mean) * inv;
    y = ga * xh + ba;
  }
  if (out->requires_grad)
    out->backward_fn = [ctx, m, n](Tensor<T>& self) {
      auto& x_ = *self.parents[0];
      auto& gamma_ = *self.parents[1];
      auto& beta_ = *self.parents[2];
      detail::CArrMap<T> ga(gamma_.value.data(), n);
      const T inv_n = T(1) / static_cast<T>(n);
      for (std::int64_t i = 0; i < m; ++i) {
        detail::CArrMap<T> dy(self.grad.data() + i * n, n);
        detail::CArrMap<T> xh(ctx->xhat.data() + i * n, n);
        if (gamma_.requires_grad)
          detail::ArrMap<T>(gamma_.grad.data(), n) += dy * xh;
        if (beta_.requires_grad)
          detail::ArrMap<T>(beta_.grad.data(), n) += dy;
        if (!x_.requires_grad) continue;
        const T inv = ctx->inv_std[i];
        auto dxhat = dy * ga;
        const T sum_dxhat = dxhat.sum();
        const T sum_dxhat_xhat = (dxhat * xh).sum();
        detail::ArrMap<T>(x_.grad.data() + i * n, n) +=
            inv * (dxhat - inv_n * sum_dxhat - xh * (inv_n * sum_dxhat_xhat));
      }
    };
  return out;
}

namespace detail {

// shared row-softmax kernels (also used by the fused attention)
template <typename T>
void softmax_row(const T* in, T* out, std::int64_t n) {
  CArrMap<T> x(in, n);
  ArrMap<T> y(out, n);
  y = (x - x.maxCoeff()).exp();
  y /= y.sum();
}

// dx = p .* (dy - <dy, p>)
template <typename T>
void softmax_row_backward(const T* p, const T* dy, T* dx, std::int64_t n) {
  CArrMap<T> pa(p, n);
  CArrMap<T> dya(dy, n);
  ArrMap<T> dxa(dx, n);
  const T dot = (dya * pa).sum();
  dxa += pa * (dya - dot);
}

}  // namespace detail

template <typename T>
TensorPtr<T> softmax_rows(const TensorPtr<T>& x) {
  if (x->shape.size() > 2)
    throw std::invalid_argument("softmax_rows: rank must be <= 2, got " +
                                shape_str(x->shape));
  const std::int64_t m = x->shape.size() == 2 ? x->shape[0] : 1;
  const std::int64_t n = x->size() / m;
  auto out = detail::make_result<T>(x->shape, {x});
  for (std::int64_t i = 0; i < m; ++i)
    detail::softmax_row(x->value.data() + i * n, out->value.data() + i * n, n);
  if (out->requires_grad)
    out->backward_fn = [m, n](Tensor<T>& self) {
      auto& x_ = *self.parents[0];
      for (std::int64_t i = 0; i < m; ++i)
        detail::softmax_row_backward(self.value.data() + i * n,
                                     self.grad.data() + i * n,
                                     x_.grad.data() + i * n, n);
    };
  return out;
}

// Inverted dropout; identity when not training or p == 0.
template <typename T>
TensorPtr<T> dropout(const TensorPtr<T>& x, double p, Rng& rng,
                     bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  auto mask = std::make_shared<std::vector<T>>(x->value.size());
  const T keep_inv = static_cast<T>(1.0 / (1.0 - p));
  for (auto& mv : *mask) mv = rng.uniform() < p ? T(0) : keep_inv;
  auto out = detail::make_result<T>(x->shape, {x});
  for (std::int64_t i = 0; i < x->size(); ++i)
    out->value[i] = x->value[i] * (*mask)[i];
  if (out->requires_grad)
    out->backward_fn = [mask](Tensor<T>& self) {
      auto& x_ = *self.parents[0];
      for (std::int64_t i = 0; i < self.size(); ++i)
        x_.grad[i] += self.grad[i] * (*mask)[i];
    };
  return out;
}

// Fused bidirectional multi-head self-attention over windows of length `len`.
// q, k, v: (batch*len, d_model) with head columns side by side. Rotary
// rotation is applied to q/k rows when `rope` is given; `alibi` (n_heads x
// len x len) is added to the pre-softmax scores when given.
template <typename T>
TensorPtr<T> self_attention(const TensorPtr<T>& q, const TensorPtr<T>& k,
                            const TensorPtr<T>& v, std::int64_t batch,
                            std::int64_t len, std::int64_t n_heads,
                            const RopeTables<T>* rope = nullptr,
                            const std::vector<T>* alibi = nullptr) {
  if (q->shape != k->shape || q->shape != v->shape || q->shape.size() != 2 ||
      q->shape[0] != batch * len)
    throw std::invalid_argument(
        "self_attention: shape mismatch: " + shape_str(q->shape) + " vs " +
        shape_str(k->shape) + " vs " + shape_str(v->shape));
  const std::int64_t d_model = q->shape[1];
  if (d_model % n_heads != 0)
    throw std::invalid_argument("self_attention: d_model not divisible by heads");
  const std::int64_t dh = d_model / n_heads;
  if (rope && (dh % 2 != 0 || rope->len < len || rope->half != dh / 2))
    throw std::invalid_argument("self_attention: rope tables do not fit");
  if (alibi && static_cast<std::int64_t>(alibi->size()) != n_heads * len * len)
    throw std::invalid_argument("self_attention: alibi bias size mismatch");
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  struct Ctx {
    AVec<T> probs;            // batch x heads x len x len
    AVec<T> qr, kr;           // rotated copies (rope only)
    RopeTables<T> rope;       // copied so the closure owns what it reads
    bool use_rope = false;
  };
  auto ctx = std::make_shared<Ctx>();
  ctx->probs.resize(static_cast<std::size_t>(batch * n_heads * len * len));
  if (rope) {
    ctx->use_rope = true;
    ctx->rope = *rope;
    ctx->qr = q->value;
    ctx->kr = k->value;
    for (std::int64_t r = 0; r < batch * len; ++r) {
      const std::int64_t pos = r % len;
      const T* crow = ctx->rope.cos_t.data() + pos * ctx->rope.half;
      const T* srow = ctx->rope.sin_t.data() + pos * ctx->rope.half;
      for (std::int64_t h = 0; h < n_heads; ++h) {
        rope_apply_row(ctx->qr.data() + r * d_model + h * dh, crow, srow,
                       ctx->rope.half);
        rope_apply_row(ctx->kr.data() + r * d_model + h * dh, crow, srow,
                       ctx->rope.half);
      }
    }
  }

  auto out = detail::make_result<T>(q->shape, {q, k, v});
  const T* qv = rope ? ctx->qr.data() : q->value.data();
  const T* kv = rope ? ctx->kr.data() : k->value.data();
  EMat<T> scores(len, len);
  Eigen::Vector<T, Eigen::Dynamic> rowtmp(len);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t h = 0; h < n_heads; ++h) {
      Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>> qb(
          qv + (b * len) * d_model + h * dh, len, dh,
          Eigen::OuterStride<>(d_model));
      Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>> kb(
          kv + (b * len) * d_model + h * dh, len, dh,
          Eigen::OuterStride<>(d_model));
      scores.noalias() = qb * kb.transpose() * att_scale;
      if (alibi)
        scores += Eigen::Map<const EMat<T>>(alibi->data() + h * len * len, len,
                                            len);
      T* prob = ctx->probs.data() + ((b * n_heads + h) * len) * len;
      Eigen::Map<EMat<T>> pmw(prob, len, len);
      rowtmp = scores.rowwise().maxCoeff();
      pmw = (scores.colwise() - rowtmp).array().exp();
      rowtmp = pmw.rowwise().sum();
      pmw.array().colwise() /= rowtmp.array();
      Eigen::Map<const EMat<T>> pm(prob, len, len);
      Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>> vb(
          v->value.data() + (b * len) * d_model + h * dh, len, dh,
          Eigen::OuterStride<>(d_model));
      Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>> ob(
          out->value.data() + (b * len) * d_model + h * dh, len, dh,
          Eigen::OuterStride<>(d_model));
      ob.noalias() = pm * vb;
    }
  }

  if (out->requires_grad)
    out->backward_fn = [ctx, batch, len, n_heads, dh, d_model,
                        att_scale](Tensor<T>& self) {
      auto& q_ = *self.parents[0];
      auto& k_ = *self.parents[1];
      auto& v_ = *self.parents[2];
      const T* qv = ctx->use_rope ? ctx->qr.data() : q_.value.data();
      const T* kv = ctx->use_rope ? ctx->kr.data() : k_.value.data();
      AVec<T> dqr, dkr;
      if (ctx->use_rope) {
        dqr.assign(q_.value.size(), T(0));
        dkr.assign(k_.value.size(), T(0));
      }
      EMat<T> dp(len, len), ds(len, len);
      Eigen::Vector<T, Eigen::Dynamic> rowdot(len);
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t h = 0; h < n_heads; ++h) {
          const std::int64_t off = (b * len) * d_model + h * dh;
          Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>> qb(
              qv + off, len, dh, Eigen::OuterStride<>(d_model));
          Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>> kb(
              kv + off, len, dh, Eigen::OuterStride<>(d_model));
          Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>> vb(
              v_.value.data() + off, len, dh, Eigen::OuterStride<>(d_model));
          Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>> dob(
              self.grad.data() + off, len, dh, Eigen::OuterStride<>(d_model));
          const T* prob = ctx->probs.data() + ((b * n_heads + h) * len) * len;
          Eigen::Map<const EMat<T>> pm(prob, len, len);

          if (v_.requires_grad) {
            Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>> dvb(
                v_.grad.data() + off, len, dh, Eigen::OuterStride<>(d_model));
            dvb.noalias() += pm.transpose() * dob;
          }
          dp.noalias() = dob * vb.transpose();
          // dS = P .* (dP - rowsum(dP .* P)), then the score scale
          rowdot = pm.cwiseProduct(dp).rowwise().sum();
          ds = (dp.colwise() - rowdot).cwiseProduct(pm) * att_scale;
          if (ctx->use_rope) {
            Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>> dqb(
                dqr.data() + off, len, dh, Eigen::OuterStride<>(d_model));
            Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>> dkb(
                dkr.data() + off, len, dh, Eigen::OuterStride<>(d_model));
            dqb.noalias() += ds * kb;
            dkb.noalias() += ds.transpose() * qb;
          } else {
            if (q_.requires_grad) {
              Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>> dqb(
                  q_.grad.data() + off, len, dh, Eigen::OuterStride<>(d_model));
              dqb.noalias() += ds * kb;
            }
            if (k_.requires_grad) {
              Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>> dkb(
                  k_.grad.data() + off, len, dh, Eigen::OuterStride<>(d_model));
              dkb.noalias() += ds.transpose() * qb;
            }
          }
        }
      }
      if (ctx->use_rope) {
        // unrotate: the adjoint of a rotation is the inverse rotation
        for (std::int64_t r = 0; r < batch * len; ++r) {
          const std::int64_t pos = r % len;
          const T* crow = ctx->rope.cos_t.data() + pos * ctx->rope.half;
          const T* srow = ctx->rope.sin_t.data() + pos * ctx->rope.half;
          for (std::int64_t h = 0; h < n_heads; ++h) {
            rope_apply_row_inverse(dqr.data() + r * d_model + h * dh, crow,
                                   srow, ctx->rope.half);
            rope_apply_row_inverse(dkr.data() + r * d_model + h * dh, crow,
                                   srow, ctx->rope.half);
          }
        }
        if (q_.requires_grad)
          Eigen::Map<EMat<T>>(q_.grad.data(), batch * len, d_model) +=
              Eigen::Map<const EMat<T>>(dqr.data(), batch * len, d_model);
        if (k_.requires_grad)
          Eigen::Map<EMat<T>>(k_.grad.data(), batch * len, d_model) +=
              Eigen::Map<const EMat<T>>(dkr.data(), batch * len, d_model);
      }
    };
  return out;
}

}  // namespace relapse::ad
