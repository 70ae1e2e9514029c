#pragma once

#include <cstddef>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsq {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

template <class Real>
struct TensorData {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // same length as value when requires_grad
  bool requires_grad = false;
};

// Handle to shared dense storage. Copies alias the same buffer; use clone()
// for a deep copy. Kernels never mutate their inputs, so handles are safe to
// pass across threads as long as each tape stays single-owner.
template <class Real>
class Tensor {
 public:
  using Data = TensorData<Real>;

  Tensor() : d_(std::make_shared<Data>()) {}

  explicit Tensor(Shape shape, Real fill = Real(0)) : d_(std::make_shared<Data>()) {
    d_->shape = std::move(shape);
    d_->value.assign(shape_numel(d_->shape), fill);
  }

  Tensor(Shape shape, std::vector<Real> data) : d_(std::make_shared<Data>()) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    d_->shape = std::move(shape);
    d_->value = std::move(data);
  }

  static Tensor scalar(Real v) { return Tensor(Shape{1}, std::vector<Real>{v}); }

  const Shape& shape() const { return d_->shape; }
  std::size_t ndim() const { return d_->shape.size(); }
  std::size_t size() const { return d_->value.size(); }
  std::size_t rows() const { return d_->shape.empty() ? 0 : d_->shape[0]; }
  std::size_t cols() const { return d_->shape.size() < 2 ? 1 : d_->shape[1]; }

  Real& at(std::size_t i) { return d_->value[i]; }
  Real at(std::size_t i) const { return d_->value[i]; }
  Real& at(std::size_t r, std::size_t c) { return d_->value[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return d_->value[r * cols() + c]; }

  std::vector<Real>& value() { return d_->value; }
  const std::vector<Real>& value() const { return d_->value; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) {
    d_->requires_grad = on;
    if (on)
      d_->grad.assign(d_->value.size(), Real(0));
    else
      d_->grad.clear();
  }

  std::vector<Real>& grad() {
    if (!d_->requires_grad) throw NumericError("tensor has no gradient slot");
    return d_->grad;
  }
  const std::vector<Real>& grad() const {
    if (!d_->requires_grad) throw NumericError("tensor has no gradient slot");
    return d_->grad;
  }
  void zero_grad() {
    if (d_->requires_grad) d_->grad.assign(d_->value.size(), Real(0));
  }

  Tensor clone() const {
    Tensor t;
    *t.d_ = *d_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return d_->shape == o.d_->shape; }
  std::string shape_string() const { return shape_str(d_->shape); }

  std::shared_ptr<Data> node() const { return d_; }

 private:
  std::shared_ptr<Data> d_;
};

using Tensor64 = Tensor<double>;
using Tensor32 = Tensor<float>;

}  // namespace dsq
