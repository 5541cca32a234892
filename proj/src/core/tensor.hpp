#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/common.hpp"

namespace titan {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
inline std::string shape_str(const Shape& s) { return dims_str(s); }

struct TensorImpl;

// Gradients produced by one backward() sweep, keyed by node.
using GradMap = std::unordered_map<TensorImpl*, std::vector<double>>;
using BackpropFn = std::function<void(const std::vector<double>&, GradMap&)>;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;   // leaf parameter flag
  std::vector<double> grad;     // persistent leaf gradient, lazily allocated
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackpropFn backprop;          // empty on leaves and detached values

  bool on_tape() const { return requires_grad || !parents.empty(); }
};

// Dense row-major real tensor. Cheap handle; values are immutable once an op
// produced them (leaves may be mutated by the optimizer between steps).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(int axis) const { return impl_->shape.at(static_cast<size_t>(axis)); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad();  // allocates zeros on first touch
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  double value() const;  // single-element tensors only
  double at(std::initializer_list<int64_t> idx) const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& ptr() const { return impl_; }

  static Tensor wrap(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Suspends tape recording (inference, finite-difference probes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_recording();

// ---- ops ----------------------------------------------------------------
// All ops validate shapes and raise errc::invalid_argument naming both sides.
// Divisions, logs and square roots clamp their arguments so finite inputs
// can never produce NaN/Inf.

Tensor matmul(const Tensor& a, const Tensor& b);  // 2D x 2D, 3D x 2D, 3D x 3D
Tensor add(const Tensor& a, const Tensor& b);     // numpy-style broadcasting
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor transpose2d(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, int axis);   // reduces (and squeezes) one axis
Tensor mean(const Tensor& a, int axis);
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& rows);
Tensor detach(const Tensor& a);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // xW + b

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---- autograd -----------------------------------------------------------

// Reverse sweep over the recorded tape from a scalar root. The returned map
// holds d(root)/d(node) for every tape node reached, leaves included.
GradMap backward(const Tensor& root);

// backward() plus accumulation into the persistent .grad of every
// requires_grad leaf. The tape itself is released with the map.
void backward_to_grads(const Tensor& root);

// Central-difference gradient verification. Returns the max relative error
// over all elements of all params; where both gradients are below 1e-8 the
// absolute difference is used instead.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double eps);

}  // namespace titan
