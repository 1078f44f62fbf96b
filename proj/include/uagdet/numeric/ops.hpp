#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "uagdet/errors.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

inline constexpr double kLeakySlope = 0.01;

/// Affine map y = W x + b with W stored [out x in]. Used both as a dense
/// layer and as a 1x1 channel map shared over spatial positions.
struct Affine {
  ParamTensor weight;
  ParamTensor bias;

  Affine() = default;
  Affine(std::size_t in, std::size_t out) : weight({out, in}), bias({out}) {}

  std::size_t in() const { return weight.value.extent(1); }
  std::size_t out() const { return weight.value.extent(0); }

  std::vector<ParamRef> params() { return {{"weight", &weight}, {"bias", &bias}}; }
};

/// Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
inline void init_affine(Affine& layer, RngStream rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in()));
  for (double& w : layer.weight.value.data()) w = rng.uniform(-bound, bound);
  layer.bias.value.fill(0.0);
}

// ---------------------------------------------------------------------------
// Dense layer

inline void linear_forward(const Affine& layer, std::span<const double> x, std::span<double> y) {
  const std::size_t n_in = layer.in(), n_out = layer.out();
  require_input(x.size() == n_in && y.size() == n_out,
                "linear: expected input " + std::to_string(n_in) + " / output " +
                    std::to_string(n_out) + ", got " + std::to_string(x.size()) + " / " +
                    std::to_string(y.size()));
  const double* w = layer.weight.value.data().data();
  const double* b = layer.bias.value.data().data();
  for (std::size_t o = 0; o < n_out; ++o) {
    const double* row = w + o * n_in;
    double acc = 0.0;
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * x[i];
    y[o] = acc + b[o];
  }
}

/// Accumulates dL/dW, dL/db into the layer and, when dx is non-empty, adds dL/dx into dx.
inline void linear_backward(Affine& layer, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dx) {
  const std::size_t n_in = layer.in(), n_out = layer.out();
  require_input(x.size() == n_in && dy.size() == n_out, "linear_backward: shape mismatch");
  require_input(dx.empty() || dx.size() == n_in, "linear_backward: dx shape mismatch");
  const double* w = layer.weight.value.data().data();
  double* gw = layer.weight.grad.data().data();
  double* gb = layer.bias.grad.data().data();
  for (std::size_t o = 0; o < n_out; ++o) {
    const double g = dy[o];
    gb[o] += g;
    if (g == 0.0) continue;
    double* grow = gw + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) grow[i] += g * x[i];
    if (!dx.empty()) {
      const double* row = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) dx[i] += g * row[i];
    }
  }
}

inline Tensor linear(const Tensor& x, const Affine& layer) {
  require_input(x.size() == layer.in(), "linear: input of shape " + shape_str(x.shape()) +
                                            " does not match layer width " +
                                            std::to_string(layer.in()));
  Tensor y({layer.out()});
  linear_forward(layer, x.data(), y.data());
  return y;
}

// ---------------------------------------------------------------------------
// 1x1 channel map over a [C x positions] layout

inline void channel_map_forward(const Affine& layer, std::span<const double> x,
                                std::size_t positions, std::span<double> y) {
  const std::size_t c_in = layer.in(), c_out = layer.out();
  require_input(x.size() == c_in * positions && y.size() == c_out * positions,
                "channel_map: shape mismatch");
  const double* w = layer.weight.value.data().data();
  const double* b = layer.bias.value.data().data();
  for (std::size_t o = 0; o < c_out; ++o) {
    double* yo = y.data() + o * positions;
    std::fill(yo, yo + positions, 0.0);
    for (std::size_t i = 0; i < c_in; ++i) {
      const double wi = w[o * c_in + i];
      const double* xi = x.data() + i * positions;
      for (std::size_t p = 0; p < positions; ++p) yo[p] += wi * xi[p];
    }
    for (std::size_t p = 0; p < positions; ++p) yo[p] += b[o];
  }
}

inline void channel_map_backward(Affine& layer, std::span<const double> x, std::size_t positions,
                                 std::span<const double> dy, std::span<double> dx) {
  const std::size_t c_in = layer.in(), c_out = layer.out();
  require_input(x.size() == c_in * positions && dy.size() == c_out * positions,
                "channel_map_backward: shape mismatch");
  require_input(dx.empty() || dx.size() == x.size(), "channel_map_backward: dx shape mismatch");
  const double* w = layer.weight.value.data().data();
  double* gw = layer.weight.grad.data().data();
  double* gb = layer.bias.grad.data().data();
  for (std::size_t o = 0; o < c_out; ++o) {
    const double* dyo = dy.data() + o * positions;
    double sum = 0.0;
    for (std::size_t p = 0; p < positions; ++p) sum += dyo[p];
    gb[o] += sum;
    for (std::size_t i = 0; i < c_in; ++i) {
      const double* xi = x.data() + i * positions;
      double acc = 0.0;
      for (std::size_t p = 0; p < positions; ++p) acc += dyo[p] * xi[p];
      gw[o * c_in + i] += acc;
      if (!dx.empty()) {
        const double wi = w[o * c_in + i];
        double* dxi = dx.data() + i * positions;
        for (std::size_t p = 0; p < positions; ++p) dxi[p] += wi * dyo[p];
      }
    }
  }
}

/// x: [C_in x H x W] -> [C_out x H x W].
inline Tensor channel_map_1x1(const Tensor& x, const Affine& layer) {
  require_input(x.rank() == 3 && x.extent(0) == layer.in(),
                "channel_map_1x1: input " + shape_str(x.shape()) + " does not have " +
                    std::to_string(layer.in()) + " channels");
  Tensor y({layer.out(), x.extent(1), x.extent(2)});
  channel_map_forward(layer, x.data(), x.extent(1) * x.extent(2), y.data());
  return y;
}

// ---------------------------------------------------------------------------
// Activations and dropout

inline double leaky_relu(double v) { return v >= 0.0 ? v : kLeakySlope * v; }
inline double leaky_relu_grad(double pre) { return pre >= 0.0 ? 1.0 : kLeakySlope; }

inline void leaky_relu_inplace(std::span<double> v) {
  for (double& x : v) x = leaky_relu(x);
}

/// Fills `mask` with inverted-dropout scale factors: 0 with probability `ratio`,
/// 1/(1-ratio) otherwise. ratio == 0 yields all ones without consuming draws.
inline void dropout_mask(std::span<double> mask, double ratio, RngStream& rng) {
  require_input(ratio >= 0.0 && ratio < 1.0, "dropout: ratio must be in [0, 1)");
  if (ratio == 0.0) {
    std::fill(mask.begin(), mask.end(), 1.0);
    return;
  }
  const double keep_scale = 1.0 / (1.0 - ratio);
  for (double& m : mask) m = rng.uniform() < ratio ? 0.0 : keep_scale;
}

inline Tensor dropout(const Tensor& x, double ratio, RngStream& rng, bool training) {
  require_input(ratio >= 0.0 && ratio < 1.0, "dropout: ratio must be in [0, 1)");
  if (!training || ratio == 0.0) return x;
  std::vector<double> mask(x.size());
  dropout_mask(mask, ratio, rng);
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return y;
}

// ---------------------------------------------------------------------------
// Softmax and losses

inline void softmax_into(std::span<const double> z, double tau, std::span<double> out) {
  require_input(tau > 0.0, "softmax: temperature must be positive");
  require_input(!z.empty() && out.size() == z.size(), "softmax: empty or mismatched input");
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp((z[i] - zmax) / tau);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

inline std::vector<double> softmax(std::span<const double> z, double tau = 1.0) {
  std::vector<double> out(z.size());
  softmax_into(z, tau, out);
  return out;
}

inline Tensor softmax(const Tensor& z, double tau = 1.0) {
  Tensor out(z.shape());
  softmax_into(z.data(), tau, out.data());
  return out;
}

/// -log softmax(logits)[label]. When `grad` is non-empty, adds
/// scale * (softmax - onehot) into it.
inline double cross_entropy(std::span<const double> logits, std::size_t label,
                            std::span<double> grad = {}, double scale = 1.0) {
  require_input(label < logits.size(), "cross_entropy: label " + std::to_string(label) +
                                           " out of range for " + std::to_string(logits.size()) +
                                           " classes");
  require_input(grad.empty() || grad.size() == logits.size(), "cross_entropy: grad shape mismatch");
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - zmax);
  const double log_norm = zmax + std::log(sum);
  if (!grad.empty()) {
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double p = std::exp(logits[k] - log_norm);
      grad[k] += scale * (p - (k == label ? 1.0 : 0.0));
    }
  }
  return log_norm - logits[label];
}

/// Sum over coordinates of 0.5 d^2 (|d| < 1) or |d| - 0.5, d = pred - target.
inline double smooth_l1(std::span<const double> pred, std::span<const double> target,
                        std::span<double> grad = {}, double scale = 1.0) {
  require_input(pred.size() == target.size(), "smooth_l1: shape mismatch");
  require_input(grad.empty() || grad.size() == pred.size(), "smooth_l1: grad shape mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    const double ad = std::abs(d);
    if (ad < 1.0) {
      loss += 0.5 * d * d;
      if (!grad.empty()) grad[i] += scale * d;
    } else {
      loss += ad - 0.5;
      if (!grad.empty()) grad[i] += scale * (d > 0.0 ? 1.0 : -1.0);
    }
  }
  return loss;
}

}  // namespace uagdet
