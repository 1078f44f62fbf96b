#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "uagdet/errors.hpp"

namespace uagdet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require_input(shape_size(shape_) == data_.size(),
                  "Tensor: data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Trainable tensor with an accumulated gradient of the same shape.
struct ParamTensor {
  Tensor value;
  Tensor grad;

  ParamTensor() = default;
  explicit ParamTensor(const Shape& shape) : value(shape), grad(shape) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Named handle into a parameter container; names are hierarchical ("head.cls.fc1.weight").
struct ParamRef {
  std::string name;
  ParamTensor* param;
};

inline void zero_grads(std::span<const ParamRef> params) {
  for (const auto& p : params) p.param->zero_grad();
}

inline void append_prefixed(std::vector<ParamRef>& out, const std::string& prefix,
                            std::vector<ParamRef> inner) {
  for (auto& p : inner) out.push_back({prefix + "." + p.name, p.param});
}

}  // namespace uagdet
