#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "uagdet/errors.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/pipeline/config.hpp"
#include "uagdet/pipeline/evaluate.hpp"
#include "uagdet/pipeline/model.hpp"
#include "uagdet/pipeline/synthetic.hpp"
#include "uagdet/pipeline/train.hpp"

namespace uagdet {

inline constexpr std::array<std::string_view, 5> kVariants = {
    "full", "no_class_embedding", "no_uncertainty_loss", "no_spatial_edges", "no_semantic_edges"};

inline PipelineConfig apply_variant(PipelineConfig cfg, std::string_view variant) {
  if (variant == "full") {
  } else if (variant == "no_class_embedding") {
    cfg.use_class_embedding = false;
  } else if (variant == "no_uncertainty_loss") {
    cfg.uncertainty_loss = false;
  } else if (variant == "no_spatial_edges") {
    cfg.graph.spatial_edges = false;
  } else if (variant == "no_semantic_edges") {
    cfg.graph.semantic_edges = false;
  } else {
    throw InputError("unknown variant '" + std::string(variant) + "'");
  }
  return cfg;
}

struct SplitData {
  Dataset train;
  Dataset test;
};

/// Disjoint train/test scenes drawn from one synthetic world.
inline SplitData make_synthetic_split(const SyntheticConfig& synth, std::size_t n_train, std::size_t n_test,
                                      std::uint64_t seed) {
  const RngStream r(seed);
  return {generate_synthetic_dataset(synth, n_train, r.fork("train-scenes").next_u64()),
          generate_synthetic_dataset(synth, n_test, r.fork("test-scenes").next_u64())};
}

struct RunResult {
  std::string variant;
  std::uint64_t seed = 0;
  TrainResult training;
  EvalReport report;
  double seconds = 0.0;
};

/// Trains a fresh model under `variant` and evaluates it on the test split.
/// Per-scene inference results go to `scene_results` when given.
inline RunResult run_variant(const PipelineConfig& base, std::string_view variant, const SplitData& data,
                             std::vector<SceneResult>* scene_results = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineConfig cfg = apply_variant(base, variant);
  Model model(cfg.dims);
  model.init(RngStream(cfg.seed).fork("init"));
  RunResult r;
  r.variant = std::string(variant);
  r.seed = cfg.seed;
  r.training = train(model, data.train, cfg);
  r.report = evaluate(model, data.test, cfg, scene_results);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace uagdet
