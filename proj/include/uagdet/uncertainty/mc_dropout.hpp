#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "uagdet/detection/box_coder.hpp"
#include "uagdet/detection/head.hpp"
#include "uagdet/detection/proposal.hpp"
#include "uagdet/errors.hpp"
#include "uagdet/geometry/rotated_box.hpp"
#include "uagdet/numeric/ops.hpp"

namespace uagdet {

struct McResult {
  std::vector<double> p_mean;     // mean of per-pass softmax vectors
  BoxDeltas box_mean{};           // mean of per-pass regression outputs
  std::vector<double> class_std;  // population stdev per class over passes
  double phi = 0.0;
};

/// Mean of the per-class standard deviations.
inline double uncertainty_scalar(std::span<const double> per_class_std) {
  require_input(!per_class_std.empty(), "uncertainty_scalar: empty input");
  double sum = 0.0;
  for (double s : per_class_std) sum += s;
  return sum / static_cast<double>(per_class_std.size());
}

/// Supplies dropout scale factors for pass `pass` of the cls and reg heads.
using MaskProvider =
    std::function<void(std::size_t pass, std::span<double> cls_mask, std::span<double> reg_mask)>;

/// Lightweight MC dropout: fc1 of each head runs once, then M passes of
/// dropout + fc2 with masks from `masks`.
inline McResult mc_detect_with_masks(const Tensor& f_conv, const HeadParams& params,
                                     std::size_t passes, const MaskProvider& masks) {
  require_input(passes >= 1, "mc_detect: pass count must be >= 1");
  require_input(f_conv.size() == params.cls.fc1.in(), "mc_detect: feature size mismatch");
  MlpTrace cls_trace, reg_trace;
  mlp_hidden(params.cls, f_conv.data(), cls_trace);
  mlp_hidden(params.reg, f_conv.data(), reg_trace);

  const std::size_t k = params.num_logits();
  std::vector<double> cls_mask(cls_trace.hidden.size()), reg_mask(reg_trace.hidden.size());
  std::vector<double> probs(passes * k);
  McResult res;
  res.p_mean.assign(k, 0.0);
  for (std::size_t j = 0; j < passes; ++j) {
    masks(j, cls_mask, reg_mask);
    mlp_output(params.cls, cls_mask, cls_trace);
    mlp_output(params.reg, reg_mask, reg_trace);
    std::span<double> pj(probs.data() + j * k, k);
    softmax_into(cls_trace.out, 1.0, pj);
    for (std::size_t c = 0; c < k; ++c) res.p_mean[c] += pj[c];
    for (std::size_t d = 0; d < 5; ++d) res.box_mean[d] += reg_trace.out[d];
  }
  const double inv_m = 1.0 / static_cast<double>(passes);
  for (double& v : res.p_mean) v *= inv_m;
  for (double& v : res.box_mean) v *= inv_m;

  // Moments are taken about the first pass so identical passes give exactly 0.
  res.class_std.assign(k, 0.0);
  std::vector<double> shift_sum(k, 0.0);
  for (std::size_t j = 0; j < passes; ++j)
    for (std::size_t c = 0; c < k; ++c) {
      const double d = probs[j * k + c] - probs[c];
      shift_sum[c] += d;
      res.class_std[c] += d * d;
    }
  for (std::size_t c = 0; c < k; ++c) {
    const double mean_d = shift_sum[c] * inv_m;
    res.class_std[c] = std::sqrt(std::max(0.0, res.class_std[c] * inv_m - mean_d * mean_d));
  }
  res.phi = uncertainty_scalar(res.class_std);
  return res;
}

/// Pass j draws its masks from rng.fork("pass", j), so passes are independent
/// of evaluation order.
inline McResult mc_detect(const Tensor& f_conv, const HeadParams& params, std::size_t passes,
                          double dropout_ratio, const RngStream& rng) {
  require_input(dropout_ratio >= 0.0 && dropout_ratio < 1.0, "mc_detect: ratio must be in [0, 1)");
  return mc_detect_with_masks(
      f_conv, params, passes,
      [&](std::size_t j, std::span<double> cls_mask, std::span<double> reg_mask) {
        RngStream pass_rng = rng.fork("pass", j);
        RngStream cls_rng = pass_rng.fork("cls");
        RngStream reg_rng = pass_rng.fork("reg");
        dropout_mask(cls_mask, dropout_ratio, cls_rng);
        dropout_mask(reg_mask, dropout_ratio, reg_rng);
      });
}

/// Builds the detected-object record from an MC result.
inline Proposal make_proposal(const ProposalRecord& rec, const McResult& mc,
                              std::size_t num_classes) {
  Proposal p;
  p.id = rec.id;
  p.features = rec.features;
  p.probs = mc.p_mean;
  p.box = decode_box(mc.box_mean, rec.prior);
  const auto [label, score] = foreground_label(p.probs, num_classes);
  p.label = label;
  p.score = score;
  p.phi = mc.phi;
  p.gt_class = rec.gt_class;
  p.gt_box = rec.gt_box;
  return p;
}

enum class RelaxMode { Score, Iou };

struct NmsSettings {
  double score_thr = 0.05;  // the usual score threshold
  double iou_thr = 0.5;
  bool per_class = true;
};

/// NMS after MC detection with one threshold relaxed to a tenth of its usual value:
/// the score threshold (default) or the IoU threshold.
inline std::vector<Proposal> relaxed_nms(std::span<const Proposal> proposals,
                                         const NmsSettings& usual,
                                         RelaxMode mode = RelaxMode::Score) {
  std::vector<RotatedBox> boxes;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& p : proposals) {
    boxes.push_back(p.box);
    scores.push_back(p.score);
    labels.push_back(p.label);
  }
  const double score_thr = mode == RelaxMode::Score ? usual.score_thr / 10.0 : usual.score_thr;
  const double iou_thr = mode == RelaxMode::Iou ? usual.iou_thr / 10.0 : usual.iou_thr;
  const auto kept = nms(boxes, scores, iou_thr, score_thr,
                        usual.per_class ? std::span<const int>(labels) : std::span<const int>{});
  std::vector<Proposal> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(proposals[i]);
  return out;
}

}  // namespace uagdet
