#pragma once

#include <cstddef>
#include <vector>

#include "uagdet/errors.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/pipeline/ap.hpp"
#include "uagdet/pipeline/config.hpp"
#include "uagdet/pipeline/inference.hpp"
#include "uagdet/pipeline/model.hpp"
#include "uagdet/pipeline/scene.hpp"
#include "uagdet/pipeline/train.hpp"

namespace uagdet {

struct EvalReport {
  MapResult refined;   // after graph refinement
  MapResult baseline;  // initial MC detections, same NMS
  std::size_t scenes = 0;
  std::size_t survivors = 0;
  std::size_t targets = 0;
  std::size_t relabelled = 0;  // targets whose label changed
  // Label accuracy over targets matched to a foreground object.
  std::size_t labelled_targets = 0;
  double target_acc_initial = 0.0;
  double target_acc_refined = 0.0;

  double flipped_fraction() const {
    return targets ? static_cast<double>(relabelled) / static_cast<double>(targets) : 0.0;
  }
};

/// Scene i uses RngStream(cfg.seed).fork("eval").fork("scene", i); scenes run
/// on cfg.threads workers with identical results for any thread count.
inline EvalReport evaluate(const Model& model, const Dataset& data, const PipelineConfig& cfg,
                           std::vector<SceneResult>* results_out = nullptr) {
  validate(cfg);
  require_input(data.num_classes() == cfg.dims.num_classes, "evaluate: dataset and model class counts differ");
  const RngStream root = RngStream(cfg.seed).fork("eval");
  std::vector<SceneResult> results(data.scenes.size());
  parallel_for(data.scenes.size(), cfg.threads, [&](std::size_t, std::size_t i) {
    results[i] = run_scene(model, data.scenes[i], cfg, root.fork("scene", i));
  });

  EvalReport rep;
  rep.scenes = data.scenes.size();
  std::vector<EvalDetection> fin, base;
  std::vector<EvalGroundTruth> gts;
  std::size_t correct_initial = 0, correct_refined = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    for (const auto& g : data.scenes[i].gt_objects) gts.push_back({i, g.box, g.label});
    for (const auto& d : r.final) fin.push_back({i, d.box, d.label, d.score});
    for (const auto& d : r.baseline) base.push_back({i, d.box, d.label, d.score});
    rep.survivors += r.sg.survivors.size();
    rep.targets += r.sg.split.targets.size();
    for (std::size_t k = 0; k < r.initial.size(); ++k) {
      if (!r.merged[k].refined) continue;
      if (r.merged[k].label != r.initial[k].label) ++rep.relabelled;
      const auto& gt = r.sg.survivors[k].gt_class;
      if (!gt || static_cast<std::size_t>(*gt) >= cfg.dims.num_classes) continue;
      ++rep.labelled_targets;
      if (r.initial[k].label == *gt) ++correct_initial;
      if (r.merged[k].label == *gt) ++correct_refined;
    }
  }
  if (rep.labelled_targets) {
    rep.target_acc_initial = static_cast<double>(correct_initial) / static_cast<double>(rep.labelled_targets);
    rep.target_acc_refined = static_cast<double>(correct_refined) / static_cast<double>(rep.labelled_targets);
  }
  rep.refined = mean_average_precision(fin, gts, cfg.dims.num_classes, cfg.ap_iou_thr, cfg.ap_all_points);
  rep.baseline = mean_average_precision(base, gts, cfg.dims.num_classes, cfg.ap_iou_thr, cfg.ap_all_points);
  if (results_out) *results_out = std::move(results);
  return rep;
}

}  // namespace uagdet
