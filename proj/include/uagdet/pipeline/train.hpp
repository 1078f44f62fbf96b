#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <thread>
#include <vector>

#include "uagdet/detection/head.hpp"
#include "uagdet/errors.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/numeric/sgd.hpp"
#include "uagdet/pipeline/config.hpp"
#include "uagdet/pipeline/inference.hpp"
#include "uagdet/pipeline/model.hpp"
#include "uagdet/pipeline/scene.hpp"
#include "uagdet/refine/gnn.hpp"

namespace uagdet {

struct SceneLoss {
  double l_obj = 0.0;
  double l_ref = 0.0;
  double total = 0.0;
  std::size_t nodes = 0;
};

/// Refinement loss of one scene graph; gradients of grad_scale * L_ref go into the refiner.
/// Loss weights are detached from the detector.
inline double scene_refinement_loss(Model& model, const SceneGraph& sg, const PipelineConfig& cfg,
                                    const RngStream& rng, bool training, bool accumulate_grad,
                                    double grad_scale = 1.0) {
  if (sg.nodes.empty()) return 0.0;
  const RefineOptions opts{cfg.use_class_embedding, cfg.dropout_ratio, training};
  const RefineTrace trace = refine_forward(model.refiner, sg.graph, sg.nodes, opts, rng);
  std::vector<int> labels;
  std::vector<double> phis;
  for (const auto& p : sg.nodes) {
    require_input(p.gt_class.has_value(), "training: survivor " + std::to_string(p.id) + " has no ground truth");
    labels.push_back(*p.gt_class);
    phis.push_back(p.phi);
  }
  const LossWeights w =
      cfg.uncertainty_loss ? uncertainty_weights(phis, cfg.tau) : LossWeights{std::vector<double>(phis.size(), 1.0)};
  std::vector<std::vector<double>> grads;
  const double loss = refinement_loss(trace.logits, labels, w, accumulate_grad ? &grads : nullptr, grad_scale);
  if (accumulate_grad) refine_backward(model.refiner, trace, sg.nodes, grads, cfg.use_class_embedding);
  return loss;
}

/// One training scene: L_obj on all proposals, then MC detection with the
/// current heads, graph construction, and L_ref on the graph nodes.
/// Gradients of L_total accumulate into `model`.
inline SceneLoss train_scene(Model& model, const SceneRecord& scene, const PipelineConfig& cfg,
                             const RngStream& rng, bool with_refinement) {
  SceneLoss out;
  InitialLossOptions o;
  o.lambda1 = cfg.lambda1;
  o.dropout_ratio = cfg.dropout_ratio;
  o.training = cfg.train_dropout;
  o.accumulate_grad = true;
  o.grad_scale = cfg.mean_loss && !scene.proposals.empty() ? 1.0 / static_cast<double>(scene.proposals.size()) : 1.0;
  out.l_obj = initial_loss(model.head, scene.proposals, o, rng.fork("obj")).total;

  if (with_refinement && cfg.lambda2 != 0.0) {
    const auto detected = detect_scene(model.head, scene, cfg, rng.fork("mc"));
    const SceneGraph sg = build_scene_graph(detected, cfg, image_diagonal(scene));
    out.nodes = sg.nodes.size();
    const double scale = cfg.mean_loss && !sg.nodes.empty() ? 1.0 / static_cast<double>(sg.nodes.size()) : 1.0;
    out.l_ref = scene_refinement_loss(model, sg, cfg, rng.fork("refine"), cfg.train_dropout, true,
                                      cfg.lambda2 * scale);
  }
  out.total = total_loss(out.l_obj, out.l_ref, cfg.lambda2);
  return out;
}

struct EpochStats {
  double l_obj = 0.0;  // mean per scene
  double l_ref = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers; worker w handles i = w, w + T, ...
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t t = std::max<std::size_t>(1, std::min(threads, n));
  if (t == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < t; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += t) fn(w, i);
    });
  for (auto& th : pool) th.join();
}

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

/// Minibatch SGD. Each scene's gradient is computed separately and the batch
/// sum is formed in scene order, so results do not depend on `cfg.threads`.
inline TrainResult train(Model& model, const Dataset& data, const PipelineConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  validate(cfg);
  require_input(!data.scenes.empty(), "train: empty dataset");
  require_input(data.num_classes() == cfg.dims.num_classes, "train: dataset and model class counts differ");
  require_input(data.channels == cfg.dims.feature_channels && data.height == cfg.dims.feature_h &&
                    data.width == cfg.dims.feature_w,
                "train: dataset feature shape does not match model dims");

  const RngStream root = RngStream(cfg.seed).fork("train");
  Sgd opt(cfg.lr, cfg.weight_decay, cfg.momentum);
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.threads, cfg.batch_size));
  std::vector<Model> clones(workers, model);

  TrainResult result;
  std::vector<std::size_t> order(data.scenes.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle = root.fork("shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    const bool with_ref = epoch >= cfg.warmup_epochs;
    const RngStream epoch_rng = root.fork("epoch", epoch);

    EpochStats stats;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      for (auto& c : clones) copy_values(c, model);
      std::vector<std::vector<double>> grads(n);
      std::vector<SceneLoss> losses(n);
      parallel_for(n, workers, [&](std::size_t w, std::size_t i) {
        Model& m = clones[w];
        m.zero_grad();
        const std::size_t s = order[start + i];
        losses[i] = train_scene(m, data.scenes[s], cfg, epoch_rng.fork("scene", s), with_ref);
        grads[i] = flat_grad(m);
      });
      model.zero_grad();
      for (std::size_t i = 0; i < n; ++i) {
        add_flat_grad(model, grads[i]);
        stats.l_obj += losses[i].l_obj;
        stats.l_ref += losses[i].l_ref;
        stats.total += losses[i].total;
      }
      opt.step(model.params());
    }
    const double inv = 1.0 / static_cast<double>(order.size());
    stats.l_obj *= inv;
    stats.l_ref *= inv;
    stats.total *= inv;
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  model.zero_grad();
  return result;
}

}  // namespace uagdet
