#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "relapse/tensor.hpp"

namespace relapse::ad {

// Adam with decoupled weight decay: parameters are first multiplied by
// (1 - lr * wd), then moved by the bias-corrected Adam step.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<TensorPtr<T>> params, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        lr_(lr),
        wd_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->value.size(), 0.0);
      v_[i].assign(params_[i]->value.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> g(
          params_[i]->grad.data(), params_[i]->grad.size());
      if (!g.allFinite())
        throw std::runtime_error(
            "optimizer_step: non-finite gradient in parameter " +
            std::to_string(i) + "; step aborted");
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, step_count_);
    const double bc2 = 1.0 - std::pow(beta2_, step_count_);
    const double decay = 1.0 - lr_ * wd_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      const auto n = static_cast<Eigen::Index>(p.value.size());
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> g(p.grad.data(), n);
      Eigen::Map<Eigen::ArrayXd> m(m_[i].data(), n);
      Eigen::Map<Eigen::ArrayXd> v(v_[i].data(), n);
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> w(p.value.data(), n);
      const auto gd = g.template cast<double>();
      m = beta1_ * m + (1.0 - beta1_) * gd;
      v = beta2_ * v + (1.0 - beta2_) * gd.square();
      w = (w.template cast<double>() * decay -
           lr_ * (m / bc1) / ((v / bc2).sqrt() + eps_))
              .template cast<T>();
    }
  }

  std::int64_t step_count() const { return step_count_; }

 private:
  std::vector<TensorPtr<T>> params_;
  double lr_, wd_, beta1_, beta2_, eps_;
  std::int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace relapse::ad
