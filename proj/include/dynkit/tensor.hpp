#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dynkit/common.hpp"

namespace dynkit::diff {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + "]";
}

// Buffer recycling for op outputs and gradients. buffer_acquire returns a
// vector of exactly n elements whose contents are UNSPECIFIED on a pool hit;
// callers must overwrite (or fill) every element.
std::vector<double> buffer_acquire(size_t n);
void buffer_release(std::vector<double>&& v);

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;

  ~TensorImpl() {
    buffer_release(std::move(value));
    buffer_release(std::move(grad));
  }

  void ensure_grad() {
    if (grad.empty()) {
      grad = buffer_acquire(value.size());
      std::fill(grad.begin(), grad.end(), 0.0);
    }
  }
};

// Dense f64 array with optional gradient, handle semantics (copies share
// the underlying buffer; use detach()/clone() for an independent value).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->value = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto vals = buffer_acquire(static_cast<size_t>(numel(shape)));
    std::fill(vals.begin(), vals.end(), v);
    return Tensor(std::move(shape), std::move(vals), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const {
    if (i < 0) i += ndim();
    return impl_->shape[i];
  }
  int64_t size() const { return static_cast<int64_t>(impl_->value.size()); }

  std::vector<double>& data() { return impl_->value; }
  const std::vector<double>& data() const { return impl_->value; }
  double operator[](int64_t i) const { return impl_->value[i]; }

  double item() const {
    if (size() != 1)
      throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (impl_->grad.empty())
      throw NumericError("gradient requested but none was accumulated");
    return impl_->grad;
  }
  void zero_grad() {
    buffer_release(std::move(impl_->grad));
    impl_->grad.clear();
  }

  Tensor detach() const {
    auto vals = buffer_acquire(impl_->value.size());
    std::copy(impl_->value.begin(), impl_->value.end(), vals.begin());
    return Tensor(impl_->shape, std::move(vals), false);
  }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Define-by-run tape. Constructing a Tape makes it the active recorder on
// this thread; ops append backward closures while it is active. backward()
// replays them once in reverse order and then frees them; a second call on
// the same tape is rejected.
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() {
    if (active_ == this) active_ = prev_;
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor& loss) {
    if (consumed_)
      throw NumericError("backward called twice on the same tape");
    if (loss.size() != 1)
      throw ShapeError("backward requires a scalar loss, got " +
                       shape_str(loss.shape()));
    consumed_ = true;
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
    nodes_.shrink_to_fit();
  }

 private:
  friend struct NoTape;
  static thread_local Tape* active_;
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
  bool consumed_ = false;
};

// Temporarily disables recording (primal-only evaluation).
struct NoTape {
  NoTape() : saved_(Tape::active_) { Tape::active_ = nullptr; }
  ~NoTape() { Tape::active_ = saved_; }
  NoTape(const NoTape&) = delete;
  NoTape& operator=(const NoTape&) = delete;

 private:
  Tape* saved_;
};

}  // namespace dynkit::diff
