#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uagdet/detection/box_coder.hpp"
#include "uagdet/detection/proposal.hpp"
#include "uagdet/errors.hpp"
#include "uagdet/model_dims.hpp"
#include "uagdet/numeric/ops.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

/// flatten -> fc1 -> LeakyReLU -> dropout -> fc2
struct MlpHead {
  Affine fc1;
  Affine fc2;

  MlpHead() = default;
  MlpHead(std::size_t in, std::size_t hidden, std::size_t out) : fc1(in, hidden), fc2(hidden, out) {}

  void init(RngStream rng) {
    init_affine(fc1, rng.fork("fc1"));
    init_affine(fc2, rng.fork("fc2"));
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    append_prefixed(out, "fc1", fc1.params());
    append_prefixed(out, "fc2", fc2.params());
    return out;
  }
};

/// Intermediate values of one MlpHead pass, kept for backward.
struct MlpTrace {
  std::vector<double> pre;     // fc1 output
  std::vector<double> hidden;  // LeakyReLU(pre)
  std::vector<double> mask;    // dropout scale factors
  std::vector<double> dropped; // hidden * mask
  std::vector<double> out;
};

/// Runs fc1 + activation only; the part shared by all MC passes.
inline void mlp_hidden(const MlpHead& head, std::span<const double> x, MlpTrace& trace) {
  trace.pre.assign(head.fc1.out(), 0.0);
  linear_forward(head.fc1, x, trace.pre);
  trace.hidden = trace.pre;
  leaky_relu_inplace(trace.hidden);
}

/// Applies a dropout mask to the cached hidden layer and runs fc2.
inline void mlp_output(const MlpHead& head, std::span<const double> mask, MlpTrace& trace) {
  trace.mask.assign(mask.begin(), mask.end());
  trace.dropped.resize(trace.hidden.size());
  for (std::size_t i = 0; i < trace.hidden.size(); ++i) trace.dropped[i] = trace.hidden[i] * mask[i];
  trace.out.assign(head.fc2.out(), 0.0);
  linear_forward(head.fc2, trace.dropped, trace.out);
}

inline void mlp_forward(const MlpHead& head, std::span<const double> x, double dropout_ratio,
                        RngStream& rng, bool training, MlpTrace& trace) {
  require_input(dropout_ratio >= 0.0 && dropout_ratio < 1.0, "dropout ratio must be in [0, 1)");
  mlp_hidden(head, x, trace);
  std::vector<double> mask(trace.hidden.size(), 1.0);
  if (training) dropout_mask(mask, dropout_ratio, rng);
  mlp_output(head, mask, trace);
}

inline void mlp_backward(MlpHead& head, std::span<const double> x, const MlpTrace& trace,
                         std::span<const double> dout, std::span<double> dx) {
  std::vector<double> d_dropped(trace.dropped.size(), 0.0);
  linear_backward(head.fc2, trace.dropped, dout, d_dropped);
  std::vector<double> d_pre(trace.pre.size());
  for (std::size_t i = 0; i < d_pre.size(); ++i)
    d_pre[i] = d_dropped[i] * trace.mask[i] * leaky_relu_grad(trace.pre[i]);
  linear_backward(head.fc1, x, d_pre, dx);
}

/// Initial classification and regression heads.
struct HeadParams {
  MlpHead cls;
  MlpHead reg;

  HeadParams() = default;
  explicit HeadParams(const ModelDims& dims)
      : cls(dims.feature_size(), dims.head_hidden, dims.num_logits()),
        reg(dims.feature_size(), dims.head_hidden, 5) {}

  void init(RngStream rng) {
    cls.init(rng.fork("cls"));
    reg.init(rng.fork("reg"));
  }

  std::size_t num_logits() const { return cls.fc2.out(); }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    append_prefixed(out, "cls", cls.params());
    append_prefixed(out, "reg", reg.params());
    return out;
  }
};

namespace detail {

inline void check_features(const Tensor& f, const MlpHead& head) {
  require_input(f.size() == head.fc1.in(),
                "head: feature tensor " + shape_str(f.shape()) + " has " +
                    std::to_string(f.size()) + " values, head expects " +
                    std::to_string(head.fc1.in()));
}

}  // namespace detail

inline Tensor cls_forward(const Tensor& f_conv, const HeadParams& params, RngStream& rng,
                          double dropout_ratio, bool training) {
  detail::check_features(f_conv, params.cls);
  MlpTrace trace;
  mlp_forward(params.cls, f_conv.data(), dropout_ratio, rng, training, trace);
  const std::size_t n = trace.out.size();
  return Tensor({n}, std::move(trace.out));
}

/// Box offsets relative to the proposal prior (see encode_box).
inline Tensor reg_forward(const Tensor& f_conv, const HeadParams& params, RngStream& rng,
                          double dropout_ratio, bool training) {
  detail::check_features(f_conv, params.reg);
  MlpTrace trace;
  mlp_forward(params.reg, f_conv.data(), dropout_ratio, rng, training, trace);
  return Tensor({5}, std::move(trace.out));
}

struct InitialLoss {
  double total = 0.0;  // cls + lambda1 * reg
  double cls = 0.0;
  double reg = 0.0;
  std::size_t positives = 0;
};

struct InitialLossOptions {
  double lambda1 = 1.0;
  double dropout_ratio = 0.0;
  bool training = false;
  // When set, gradients of grad_scale * total are accumulated into the heads.
  bool accumulate_grad = false;
  double grad_scale = 1.0;
};

/// L_obj = sum_i CE(cls_i, y_i) + lambda1 * sum_{i positive} SmoothL1(reg_i, encode(gt_i)).
/// Background proposals (gt_class == num_classes) only enter the classification sum.
/// `rng` supplies one sub-stream per proposal id when dropout is active.
inline InitialLoss initial_loss(HeadParams& params, std::span<const ProposalRecord> proposals,
                                const InitialLossOptions& opts, const RngStream& rng) {
  const std::size_t background = params.num_logits() - 1;
  InitialLoss loss;
  MlpTrace cls_trace, reg_trace;
  std::vector<double> dcls, dreg;
  for (const auto& prop : proposals) {
    require_input(prop.gt_class.has_value(),
                  "initial_loss: proposal " + std::to_string(prop.id) + " has no ground-truth class");
    require_input(prop.features != nullptr, "initial_loss: proposal without features");
    const int y = *prop.gt_class;
    require_input(y >= 0 && static_cast<std::size_t>(y) <= background,
                  "initial_loss: ground-truth class out of range");
    const bool positive = static_cast<std::size_t>(y) != background;
    require_input(!positive || prop.gt_box.has_value(),
                  "initial_loss: positive proposal " + std::to_string(prop.id) + " has no ground-truth box");

    const Tensor& f = *prop.features;
    detail::check_features(f, params.cls);
    RngStream prop_rng = rng.fork("proposal", prop.id);
    RngStream cls_rng = prop_rng.fork("cls");
    RngStream reg_rng = prop_rng.fork("reg");

    mlp_forward(params.cls, f.data(), opts.dropout_ratio, cls_rng, opts.training, cls_trace);
    dcls.assign(cls_trace.out.size(), 0.0);
    loss.cls += cross_entropy(cls_trace.out, static_cast<std::size_t>(y),
                              opts.accumulate_grad ? std::span<double>(dcls) : std::span<double>{},
                              opts.grad_scale);
    if (opts.accumulate_grad) mlp_backward(params.cls, f.data(), cls_trace, dcls, {});

    if (positive) {
      ++loss.positives;
      mlp_forward(params.reg, f.data(), opts.dropout_ratio, reg_rng, opts.training, reg_trace);
      const BoxDeltas target = encode_box(*prop.gt_box, prop.prior);
      dreg.assign(5, 0.0);
      loss.reg += smooth_l1(reg_trace.out, target,
                            opts.accumulate_grad ? std::span<double>(dreg) : std::span<double>{},
                            opts.grad_scale * opts.lambda1);
      if (opts.accumulate_grad && opts.lambda1 != 0.0)
        mlp_backward(params.reg, f.data(), reg_trace, dreg, {});
    }
  }
  loss.total = loss.cls + opts.lambda1 * loss.reg;
  return loss;
}

}  // namespace uagdet
