#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "relapse/rng.hpp"

// Reverse-mode autodiff over dense row-major tensors of rank 0..2.
// Graphs are built define-by-run; backward() walks the tape in reverse
// topological order and accumulates gradients additively, so a value used
// twice receives the sum of both adjoint contributions.

namespace relapse::ad {

// 64-byte aligned storage for every numeric buffer Eigen touches. Eigen
// picks vector kernels based on pointer alignment; pinning the alignment
// keeps reduction order, and therefore results, bit-stable across runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AVec = std::vector<T, AlignedAllocator<T>>;

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Tensor;

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
class Tensor {
 public:
  Shape shape;
  AVec<T> value;
  AVec<T> grad;  // empty unless requires_grad
  bool requires_grad = false;

  std::vector<TensorPtr<T>> parents;
  std::function<void(Tensor<T>&)> backward_fn;  // pulls grad into parents

  Tensor(Shape s, bool rg)
      : shape(std::move(s)), value(shape_size(shape), T(0)), requires_grad(rg) {
    if (requires_grad) grad.assign(value.size(), T(0));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  std::int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::int64_t cols() const {
    return shape.size() < 2 ? (shape.empty() ? 1 : 1) : shape[1];
  }

  // Rank-2 view; rank-1 tensors map as a single row, scalars as 1x1.
  Eigen::Map<EMat<T>> mat() {
    return {value.data(), mat_rows(), mat_cols()};
  }
  Eigen::Map<const EMat<T>> mat() const {
    return {value.data(), mat_rows(), mat_cols()};
  }
  Eigen::Map<EMat<T>> gmat() {
    return {grad.data(), mat_rows(), mat_cols()};
  }
  Eigen::Map<const EMat<T>> gmat() const {
    return {grad.data(), mat_rows(), mat_cols()};
  }

  void zero_grad() {
    if (requires_grad) std::fill(grad.begin(), grad.end(), T(0));
  }

 private:
  std::int64_t mat_rows() const {
    return shape.size() == 2 ? shape[0] : 1;
  }
  std::int64_t mat_cols() const {
    return shape.size() == 2 ? shape[1] : size();
  }
};

template <typename T>
TensorPtr<T> make_tensor(Shape shape, bool requires_grad = false) {
  return std::make_shared<Tensor<T>>(std::move(shape), requires_grad);
}

template <typename T>
TensorPtr<T> constant(Shape shape, AVec<T> values) {
  auto t = make_tensor<T>(std::move(shape), false);
  if (static_cast<std::int64_t>(values.size()) != t->size())
    throw std::invalid_argument("constant: value count does not match shape " +
                                shape_str(t->shape));
  t->value = std::move(values);
  return t;
}

template <typename T>
TensorPtr<T> constant(Shape shape, const std::vector<T>& values) {
  return constant<T>(std::move(shape), AVec<T>(values.begin(), values.end()));
}

template <typename T>
TensorPtr<T> constant(Shape shape, std::initializer_list<T> values) {
  return constant<T>(std::move(shape), AVec<T>(values.begin(), values.end()));
}

template <typename T>
TensorPtr<T> scalar(T v) {
  auto t = make_tensor<T>(Shape{}, false);
  t->value[0] = v;
  return t;
}

// Leaf parameter filled from N(0, stddev^2).
template <typename T>
TensorPtr<T> param_normal(Shape shape, Rng& rng, double stddev) {
  auto t = make_tensor<T>(std::move(shape), true);
  for (auto& v : t->value) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
TensorPtr<T> param_zeros(Shape shape) {
  return make_tensor<T>(std::move(shape), true);
}

template <typename T>
TensorPtr<T> param_ones(Shape shape) {
  auto t = make_tensor<T>(std::move(shape), true);
  std::fill(t->value.begin(), t->value.end(), T(1));
  return t;
}

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch: " +
                                shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
}

template <typename T>
bool any_grad(const std::vector<TensorPtr<T>>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

template <typename T>
TensorPtr<T> make_result(Shape shape, std::vector<TensorPtr<T>> parents) {
  auto out = make_tensor<T>(std::move(shape), any_grad(parents));
  out->parents = std::move(parents);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise + linear algebra ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(*a, *b, "add");
  auto out = detail::make_result<T>(a->shape, {a, b});
  out->mat() = a->mat() + b->mat();
  if (out->requires_grad)
    out->backward_fn = [](Tensor<T>& self) {
      if (self.parents[0]->requires_grad)
        self.parents[0]->gmat() += self.gmat();
      if (self.parents[1]->requires_grad)
        self.parents[1]->gmat() += self.gmat();
    };
  return out;
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(*a, *b, "sub");
  auto out = detail::make_result<T>(a->shape, {a, b});
  out->mat() = a->mat() - b->mat();
  if (out->requires_grad)
    out->backward_fn = [](Tensor<T>& self) {
      if (self.parents[0]->requires_grad)
        self.parents[0]->gmat() += self.gmat();
      if (self.parents[1]->requires_grad)
        self.parents[1]->gmat() -= self.gmat();
    };
  return out;
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(*a, *b, "mul");
  auto out = detail::make_result<T>(a->shape, {a, b});
  out->mat() = a->mat().cwiseProduct(b->mat());
  if (out->requires_grad)
    out->backward_fn = [](Tensor<T>& self) {
      auto& a_ = *self.parents[0];
      auto& b_ = *self.parents[1];
      if (a_.requires_grad)
        a_.gmat() += self.gmat().cwiseProduct(b_.mat());
      if (b_.requires_grad)
        b_.gmat() += self.gmat().cwiseProduct(a_.mat());
    };
  return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& a, T c) {
  auto out = detail::make_result<T>(a->shape, {a});
  out->mat() = a->mat() * c;
  if (out->requires_grad)
    out->backward_fn = [c](Tensor<T>& self) {
      self.parents[0]->gmat() += self.gmat() * c;
    };
  return out;
}

// x: (m,n), bias: (n) broadcast over rows
template <typename T>
TensorPtr<T> add_bias(const TensorPtr<T>& x, const TensorPtr<T>& bias) {
  if (x->shape.size() != 2 || bias->shape.size() != 1 ||
      x->shape[1] != bias->shape[0])
    throw std::invalid_argument("add_bias: shape mismatch: " +
                                shape_str(x->shape) + " vs " +
                                shape_str(bias->shape));
  auto out = detail::make_result<T>(x->shape, {x, bias});
  out->mat() = x->mat().rowwise() +
               Eigen::Map<const Eigen::RowVectorX<T>>(bias->value.data(),
                                                      bias->size());
  if (out->requires_grad)
    out->backward_fn = [](Tensor<T>& self) {
      if (self.parents[0]->requires_grad)
        self.parents[0]->gmat() += self.gmat();
      if (self.parents[1]->requires_grad)
        Eigen::Map<Eigen::RowVectorX<T>>(self.parents[1]->grad.data(),
                                         self.parents[1]->size()) +=
            self.gmat().colwise().sum();
    };
  return out;
}

template <typename T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 ||
      a->shape[1] != b->shape[0])
    throw std::invalid_argument("matmul: shape mismatch: " +
                                shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
  auto out = detail::make_result<T>(Shape{a->shape[0], b->shape[1]}, {a, b});
  out->mat().noalias() = a->mat() * b->mat();
  if (out->requires_grad)
    out->backward_fn = [](Tensor<T>& self) {
      auto& a_ = *self.parents[0];
      auto& b_ = *self.parents[1];
      if (a_.requires_grad) a_.gmat().noalias() += self.gmat() * b_.mat().transpose();
      if (b_.requires_grad) b_.gmat().noalias() += a_.mat().transpose() * self.gmat();
    };
  return out;
}

// sum of all entries -> scalar
template <typename T>
TensorPtr<T> sum_all(const TensorPtr<T>& a) {
  auto out = detail::make_result<T>(Shape{}, {a});
  out->value[0] = a->mat().sum();
  if (out->requires_grad)
    out->backward_fn = [](Tensor<T>& self) {
      self.parents[0]->gmat().array() += self.grad[0];
    };
  return out;
}

// Mean over the time axis: (groups*rows_per_group, n) -> (groups, n).
// With a single group this is the mean-pool producing one row per window.
template <typename T>
TensorPtr<T> mean_pool_rows(const TensorPtr<T>& x,
                            std::int64_t rows_per_group) {
  if (x->shape.size() != 2 || rows_per_group < 1 ||
      x->shape[0] % rows_per_group != 0)
    throw std::invalid_argument("mean_pool_rows: shape " +
                                shape_str(x->shape) + " not divisible into " +
                                std::to_string(rows_per_group) + "-row groups");
  const std::int64_t groups = x->shape[0] / rows_per_group;
  const std::int64_t n = x->shape[1];
  auto out = detail::make_result<T>(Shape{groups, n}, {x});
  const T inv = T(1) / static_cast<T>(rows_per_group);
  for (std::int64_t g = 0; g < groups; ++g)
    out->mat().row(g) =
        x->mat().middleRows(g * rows_per_group, rows_per_group).colwise().sum() *
        inv;
  if (out->requires_grad)
    out->backward_fn = [rows_per_group, inv](Tensor<T>& self) {
      auto& x_ = *self.parents[0];
      const std::int64_t groups = self.shape[0];
      for (std::int64_t g = 0; g < groups; ++g)
        x_.gmat().middleRows(g * rows_per_group, rows_per_group).rowwise() +=
            self.gmat().row(g) * inv;
    };
  return out;
}

// Batch-mean squared L2 error: (1/m) * sum_i w_i * ||pred_i - target_i||^2.
// Rank-1 operands are treated as a single row. Optional per-row weights
// (rank-1, length m) mask rows out of the loss.
template <typename T>
TensorPtr<T> mse_loss(const TensorPtr<T>& pred, const TensorPtr<T>& target,
                      const TensorPtr<T>& row_weights = nullptr) {
  detail::require_same_shape(*pred, *target, "mse_loss");
  const std::int64_t m = pred->shape.size() == 2 ? pred->shape[0] : 1;
  if (row_weights && row_weights->size() != m)
    throw std::invalid_argument("mse_loss: row_weights shape " +
                                shape_str(row_weights->shape) +
                                " does not match " + std::to_string(m) +
                                " rows");
  std::vector<TensorPtr<T>> parents = {pred, target};
  if (row_weights) parents.push_back(row_weights);
  auto out = detail::make_result<T>(Shape{}, std::move(parents));
  EMat<T> diff = pred->mat() - target->mat();
  T acc = T(0);
  for (std::int64_t i = 0; i < m; ++i) {
    const T w = row_weights ? row_weights->value[i] : T(1);
    acc += w * diff.row(i).squaredNorm();
  }
  out->value[0] = acc / static_cast<T>(m);
  if (out->requires_grad)
    out->backward_fn = [m, has_w = bool(row_weights)](Tensor<T>& self) {
      auto& pred_ = *self.parents[0];
      auto& target_ = *self.parents[1];
      const T g = self.grad[0] * T(2) / static_cast<T>(m);
      EMat<T> d = (pred_.mat() - target_.mat()) * g;
      if (has_w) {
        auto& w_ = *self.parents[2];
        for (std::int64_t i = 0; i < m; ++i) d.row(i) *= w_.value[i];
      }
      if (pred_.requires_grad) pred_.gmat() += d;
      if (target_.requires_grad) target_.gmat() -= d;
    };
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Gradient of `root` (a scalar) w.r.t. every reachable tensor that requires
// grad. Accumulates: callers zero parameter grads between steps.
template <typename T>
void backward(const TensorPtr<T>& root) {
  if (root->size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_str(root->shape));
  if (!root->requires_grad) return;

  // iterative post-order DFS
  std::vector<Tensor<T>*> order;
  std::unordered_set<Tensor<T>*> visited;
  std::vector<std::pair<Tensor<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor<T>* next = node->parents[idx++].get();
      if (next->requires_grad && visited.insert(next).second)
        stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

}  // namespace relapse::ad
