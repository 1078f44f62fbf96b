#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "uagdet/errors.hpp"
#include "uagdet/geometry/rotated_box.hpp"

namespace uagdet {

struct EvalDetection {
  std::size_t image = 0;
  RotatedBox box;
  int label = 0;
  double score = 0.0;
};

struct EvalGroundTruth {
  std::size_t image = 0;
  RotatedBox box;
  int label = 0;
};

/// AP from a ranked list of TP/FP flags.
/// 11-point: mean over t in {0, 0.1, ..., 1} of the max precision at recall >= t.
/// All-points: area under the monotone precision envelope.
inline double average_precision(const std::vector<bool>& tp_ranked, std::size_t num_gt, bool all_points = false) {
  require_input(num_gt > 0, "average_precision: class has no ground truth");
  const std::size_t n = tp_ranked.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_ranked[i]) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  if (!all_points) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (recall[i] >= t) p = std::max(p, precision[i]);
      ap += p;
    }
    return ap / 11.0;
  }
  std::vector<double> env(precision);
  for (std::size_t i = n; i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * env[i];
    prev_recall = recall[i];
  }
  return ap;
}

struct MapResult {
  std::vector<double> ap;           // per class; NaN when the class has no ground truth
  std::vector<std::size_t> num_gt;  // per class
  double map = 0.0;                 // mean over classes with ground truth
};

/// Detections are ranked by descending score (ties by input order). Each one is
/// matched to the unmatched ground truth of its class and image with the highest
/// rotated IoU; it is a TP when that IoU reaches `iou_thr`.
inline MapResult mean_average_precision(std::span<const EvalDetection> dets,
                                        std::span<const EvalGroundTruth> gts, std::size_t num_classes,
                                        double iou_thr = 0.5, bool all_points = false) {
  require_input(iou_thr > 0.0 && iou_thr <= 1.0, "mean_average_precision: iou_thr must be in (0, 1]");
  MapResult r;
  r.ap.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  r.num_gt.assign(num_classes, 0);
  for (const auto& g : gts) {
    require_input(g.label >= 0 && static_cast<std::size_t>(g.label) < num_classes,
                  "mean_average_precision: ground-truth label out of range");
    ++r.num_gt[static_cast<std::size_t>(g.label)];
  }

  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<bool> matched(gts.size(), false);
  std::vector<std::vector<bool>> flags(num_classes);
  for (std::size_t i : order) {
    const auto& d = dets[i];
    if (d.label < 0 || static_cast<std::size_t>(d.label) >= num_classes) continue;
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[g] || gts[g].image != d.image || gts[g].label != d.label) continue;
      const double iou = rotated_iou(d.box, gts[g].box);
      if (iou > best) {
        best = iou;
        best_g = g;
      }
    }
    const bool tp = best_g < gts.size() && best >= iou_thr;
    if (tp) matched[best_g] = true;
    flags[static_cast<std::size_t>(d.label)].push_back(tp);
  }

  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (r.num_gt[c] == 0) continue;
    r.ap[c] = average_precision(flags[c], r.num_gt[c], all_points);
    sum += r.ap[c];
    ++counted;
  }
  r.map = counted ? sum / static_cast<double>(counted) : 0.0;
  return r;
}

}  // namespace uagdet
