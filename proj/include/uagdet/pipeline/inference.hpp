#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "uagdet/detection/proposal.hpp"
#include "uagdet/errors.hpp"
#include "uagdet/graph/object_graph.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/pipeline/config.hpp"
#include "uagdet/pipeline/model.hpp"
#include "uagdet/pipeline/scene.hpp"
#include "uagdet/refine/gnn.hpp"
#include "uagdet/uncertainty/mc_dropout.hpp"

namespace uagdet {

inline double image_diagonal(const SceneRecord& s) { return std::hypot(s.image_w, s.image_h); }

/// MC detection for every proposal of a scene; proposal id k uses rng.fork("mc", k).
inline std::vector<Proposal> detect_scene(const HeadParams& head, const SceneRecord& scene,
                                          const PipelineConfig& cfg, const RngStream& rng) {
  std::vector<Proposal> out;
  out.reserve(scene.proposals.size());
  for (const auto& rec : scene.proposals) {
    require_input(rec.features != nullptr, "detect_scene: proposal without features");
    const McResult mc = mc_detect(*rec.features, head, cfg.mc_passes, cfg.dropout_ratio, rng.fork("mc", rec.id));
    out.push_back(make_proposal(rec, mc, cfg.dims.num_classes));
  }
  return out;
}

struct SceneGraph {
  std::vector<Proposal> survivors;  // after relaxed NMS
  UncertaintySplit split;
  ObjectGraph graph;
  std::vector<Proposal> nodes;  // sources then targets
};

inline SceneGraph build_scene_graph(std::span<const Proposal> detected, const PipelineConfig& cfg,
                                    double image_diag) {
  SceneGraph sg;
  sg.survivors = relaxed_nms(detected, cfg.nms, cfg.relax_mode);
  sg.split = split_by_uncertainty(sg.survivors, cfg.cap);
  sg.graph = build_graph(sg.split.sources, sg.split.targets, cfg.graph, image_diag, sg.survivors);
  sg.nodes = sg.split.sources;
  sg.nodes.insert(sg.nodes.end(), sg.split.targets.begin(), sg.split.targets.end());
  return sg;
}

struct SceneResult {
  SceneGraph sg;
  std::unordered_map<std::size_t, std::vector<double>> refined_logits;  // by proposal id, all graph nodes
  std::vector<Detection> initial;   // one per survivor
  std::vector<Detection> merged;    // initial with targets relabelled
  std::vector<Detection> baseline;  // standard NMS over initial
  std::vector<Detection> final;     // standard NMS over merged
};

/// Full inference on one scene.
inline SceneResult run_scene(const Model& model, const SceneRecord& scene, const PipelineConfig& cfg,
                             const RngStream& rng) {
  SceneResult r;
  const auto detected = detect_scene(model.head, scene, cfg, rng);
  r.sg = build_scene_graph(detected, cfg, image_diagonal(scene));
  for (const auto& p : r.sg.survivors) r.initial.push_back(initial_detection(p));

  if (!r.sg.nodes.empty()) {
    const RefineOptions opts{cfg.use_class_embedding, cfg.dropout_ratio, false};
    const RefineTrace trace = refine_forward(model.refiner, r.sg.graph, r.sg.nodes, opts, rng.fork("refine"));
    for (std::size_t i = 0; i < r.sg.nodes.size(); ++i) r.refined_logits[r.sg.nodes[i].id] = trace.logits[i];
  }
  r.merged = cfg.merge ? merge_results(r.initial, r.refined_logits, r.sg.graph.dst_ids, cfg.dims.num_classes)
                       : r.initial;
  r.baseline = final_nms(r.initial, cfg.nms.score_thr, cfg.nms.iou_thr, cfg.nms.per_class);
  r.final = final_nms(r.merged, cfg.nms.score_thr, cfg.nms.iou_thr, cfg.nms.per_class);
  return r;
}

}  // namespace uagdet
