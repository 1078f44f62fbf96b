#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

/// value <- value - lr * (grad + weight_decay * value). Gradients are left as-is.
inline void sgd_step(std::span<const ParamRef> params, double lr, double weight_decay) {
  for (const auto& ref : params) {
    auto v = ref.param->value.data();
    auto g = ref.param->grad.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * (g[i] + weight_decay * v[i]);
  }
}

/// SGD with optional heavy-ball momentum. With momentum == 0 it is exactly sgd_step.
class Sgd {
 public:
  Sgd(double lr, double weight_decay, double momentum = 0.0)
      : lr_(lr), weight_decay_(weight_decay), momentum_(momentum) {}

  void step(std::span<const ParamRef> params) {
    if (momentum_ == 0.0) {
      sgd_step(params, lr_, weight_decay_);
      return;
    }
    for (const auto& ref : params) {
      auto& vel = velocity_[ref.name];
      auto v = ref.param->value.data();
      auto g = ref.param->grad.data();
      if (vel.size() != v.size()) vel.assign(v.size(), 0.0);
      for (std::size_t i = 0; i < v.size(); ++i) {
        vel[i] = momentum_ * vel[i] + g[i] + weight_decay_ * v[i];
        v[i] -= lr_ * vel[i];
      }
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  double weight_decay_;
  double momentum_;
  std::unordered_map<std::string, std::vector<double>> velocity_;
};

}  // namespace uagdet
