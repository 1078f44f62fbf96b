#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "uagdet/errors.hpp"
#include "uagdet/geometry/rotated_box.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/numeric/tensor.hpp"
#include "uagdet/pipeline/config.hpp"
#include "uagdet/pipeline/scene.hpp"

namespace uagdet {

// Scene generator mimicking aerial layouts.
//
// Objects come in clusters. Each cluster draws one (member, context) class
// pair; members of confusable pairs share a prototype, so only the context
// class seen around them identifies them. Feature channels are split into
// appearance channels (class prototype + noise) and style channels. Compact
// clusters sit within a radius well below the spatial threshold and have
// independent per-object styles; dispersed clusters spread their objects at
// least `separation` apart but share one style vector, so only feature
// similarity links them. Objects of different clusters are always at least
// `separation` apart.

inline void validate(const SyntheticConfig& c) {
  require_input(c.num_classes >= 1, "synth: num_classes must be >= 1");
  require_input(c.feature_channels >= 1 && c.feature_h >= 1 && c.feature_w >= 1, "synth: empty feature shape");
  require_input(c.appearance_channels >= 1 && c.appearance_channels <= c.feature_channels,
                "synth: appearance_channels must be in [1, feature_channels]");
  require_input(c.min_objects >= 1 && c.min_objects <= c.max_objects, "synth: need 1 <= min_objects <= max_objects");
  require_input(c.min_cluster >= 1 && c.min_cluster <= c.max_cluster, "synth: need 1 <= min_cluster <= max_cluster");
  require_input(c.image_w > 100.0 && c.image_h > 100.0, "synth: image too small");
  require_input(c.context_fraction >= 0.0 && c.context_fraction <= 1.0, "synth: context_fraction out of [0, 1]");
  require_input(c.dispersed_fraction >= 0.0 && c.dispersed_fraction <= 1.0, "synth: dispersed_fraction out of [0, 1]");
  require_input(c.duplicate_prob >= 0.0 && c.duplicate_prob <= 1.0, "synth: duplicate_prob out of [0, 1]");
  require_input(c.appearance_noise >= 0.0 && c.style_noise >= 0.0 && c.proposal_noise >= 0.0,
                "synth: noise levels must be non-negative");
  const int k = static_cast<int>(c.num_classes);
  for (const auto& [a, b] : c.context_of)
    require_input(a >= 0 && a < k && b >= 0 && b < k && a != b, "synth: context_of entry out of range");
  for (const auto& [a, b] : c.confusable)
    require_input(a >= 0 && a < k && b >= 0 && b < k && a != b, "synth: confusable entry out of range");
}

/// Class prototypes derived from `prototype_seed` only, so every scene of a
/// benchmark shares them. Confusable classes map to the same prototype.
struct SyntheticWorld {
  SyntheticConfig config;
  std::vector<std::size_t> identity;       // class (incl. background) -> prototype index
  std::vector<std::vector<double>> prototypes;  // [appearance_channels * positions]

  explicit SyntheticWorld(const SyntheticConfig& c) : config(c) {
    validate(c);
    const std::size_t k = c.num_logits();
    identity.resize(k);
    for (std::size_t i = 0; i < k; ++i) identity[i] = i;
    // Union confusable classes onto the smaller id.
    for (std::size_t pass = 0; pass < c.confusable.size(); ++pass)
      for (const auto& [a, b] : c.confusable) {
        const std::size_t m = std::min(identity[static_cast<std::size_t>(a)], identity[static_cast<std::size_t>(b)]);
        identity[static_cast<std::size_t>(a)] = identity[static_cast<std::size_t>(b)] = m;
      }
    const std::size_t dim = c.appearance_channels * c.feature_h * c.feature_w;
    RngStream rng = RngStream(c.prototype_seed).fork("prototype");
    prototypes.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      RngStream pr = rng.fork(i);
      prototypes[i].resize(dim);
      for (double& v : prototypes[i]) v = pr.normal(0.0, c.prototype_scale);
    }
  }

  const std::vector<double>& prototype(std::size_t cls) const { return prototypes[identity[cls]]; }
  std::size_t positions() const { return config.feature_h * config.feature_w; }
  std::size_t feature_size() const { return config.feature_channels * positions(); }
  std::size_t style_size() const { return (config.feature_channels - config.appearance_channels) * positions(); }

  bool is_confusable(int cls) const {
    for (const auto& [a, b] : config.confusable)
      if (a == cls || b == cls) return true;
    return false;
  }
};

namespace detail {

struct PlacedObject {
  RotatedBox box;
  int label;
  int group;
  std::vector<double> features;
};

inline std::vector<double> draw_style(RngStream& rng, std::size_t n, double scale) {
  std::vector<double> s(n);
  for (double& v : s) v = rng.normal(0.0, scale);
  return s;
}

inline std::vector<double> object_features(const SyntheticWorld& world, int label,
                                           const std::vector<double>& style, RngStream& rng) {
  const auto& c = world.config;
  std::vector<double> f(world.feature_size());
  const auto& proto = world.prototype(static_cast<std::size_t>(label));
  const double sign = c.signed_appearance && rng.bernoulli(0.5) ? -1.0 : 1.0;
  for (std::size_t i = 0; i < proto.size(); ++i) f[i] = sign * proto[i] + rng.normal(0.0, c.appearance_noise);
  for (std::size_t i = 0; i < style.size(); ++i) f[proto.size() + i] = style[i] + rng.normal(0.0, c.style_noise);
  return f;
}

inline RotatedBox jitter_box(const RotatedBox& b, RngStream& rng, double shift, double log_scale, double angle) {
  return RotatedBox(b.cx + rng.uniform(-shift, shift), b.cy + rng.uniform(-shift, shift),
                    b.w * std::exp(rng.uniform(-log_scale, log_scale)),
                    b.h * std::exp(rng.uniform(-log_scale, log_scale)), b.theta + rng.uniform(-angle, angle));
}

inline std::shared_ptr<const Tensor> proposal_features(const SyntheticWorld& world, const std::vector<double>& base,
                                                       RngStream& rng) {
  const auto& c = world.config;
  Tensor t({c.feature_channels, c.feature_h, c.feature_w});
  for (std::size_t i = 0; i < base.size(); ++i) t[i] = base[i] + rng.normal(0.0, c.proposal_noise);
  return std::make_shared<const Tensor>(std::move(t));
}

}  // namespace detail

inline SceneRecord generate_synthetic_scene(const SyntheticWorld& world, std::uint64_t seed,
                                            const std::string& scene_id = "") {
  const auto& c = world.config;
  RngStream rng = RngStream(seed).fork("scene");
  RngStream layout = rng.fork("layout");
  RngStream feat_rng = rng.fork("features");
  RngStream prop_rng = rng.fork("proposals");

  SceneRecord scene;
  scene.scene_id = scene_id.empty() ? "synthetic-" + std::to_string(seed) : scene_id;
  scene.image_w = c.image_w;
  scene.image_h = c.image_h;

  const auto n_target = static_cast<std::size_t>(
      layout.uniform_int(static_cast<std::int64_t>(c.min_objects), static_cast<std::int64_t>(c.max_objects)));
  const double margin = 24.0;
  std::vector<detail::PlacedObject> objects;

  auto far_enough = [&](double x, double y, int group, double same_group_min) {
    for (const auto& o : objects) {
      const double d = std::hypot(o.box.cx - x, o.box.cy - y);
      if (d < (o.group == group ? same_group_min : c.separation)) return false;
    }
    return true;
  };

  int group = 0;
  std::size_t failed_clusters = 0;
  while (objects.size() < n_target && failed_clusters < 200) {
    int member = 0, context = 0;
    if (!c.context_of.empty()) {
      const auto& pr = c.context_of[static_cast<std::size_t>(
          layout.uniform_int(0, static_cast<std::int64_t>(c.context_of.size()) - 1))];
      member = pr.first;
      context = pr.second;
    } else {
      member = context = static_cast<int>(layout.uniform_int(0, static_cast<std::int64_t>(c.num_classes) - 1));
    }
    const std::size_t size = std::min<std::size_t>(
        static_cast<std::size_t>(layout.uniform_int(static_cast<std::int64_t>(c.min_cluster),
                                                    static_cast<std::int64_t>(c.max_cluster))),
        n_target - objects.size());
    const bool dispersed = layout.bernoulli(c.dispersed_fraction);
    const std::vector<double> shared_style =
        dispersed ? detail::draw_style(feat_rng, world.style_size(), c.style_scale) : std::vector<double>{};
    const double ax = layout.uniform(margin, c.image_w - margin);
    const double ay = layout.uniform(margin, c.image_h - margin);

    std::size_t placed = 0;
    for (std::size_t k = 0; k < size; ++k) {
      const int label = (k == 0 || layout.bernoulli(c.context_fraction)) ? context : member;
      bool ok = false;
      double x = 0.0, y = 0.0;
      for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
        if (dispersed) {
          x = ax + layout.uniform(-0.5, 0.5) * c.dispersed_extent;
          y = ay + layout.uniform(-0.5, 0.5) * c.dispersed_extent;
        } else {
          const double r = c.compact_radius * std::sqrt(layout.uniform());
          const double a = layout.uniform(0.0, 2.0 * std::numbers::pi);
          x = ax + r * std::cos(a);
          y = ay + r * std::sin(a);
        }
        ok = x >= margin && x <= c.image_w - margin && y >= margin && y <= c.image_h - margin &&
             far_enough(x, y, group, dispersed ? c.separation : c.compact_spacing);
      }
      if (!ok) {
        if (k == 0) break;  // a cluster never goes without its context object
        continue;
      }
      const RotatedBox box(x, y, layout.uniform(14.0, 24.0), layout.uniform(8.0, 14.0),
                           layout.uniform(-std::numbers::pi / 2.0, std::numbers::pi / 2.0));
      const std::vector<double> style =
          dispersed ? shared_style : detail::draw_style(feat_rng, world.style_size(), c.style_scale);
      objects.push_back({box, label, group, detail::object_features(world, label, style, feat_rng)});
      ++placed;
    }
    if (placed == 0) ++failed_clusters;
    ++group;
  }

  std::size_t next_id = 0;
  for (const auto& o : objects) {
    scene.gt_objects.push_back({o.box, o.label, o.group});
    ProposalRecord p;
    p.id = next_id++;
    p.prior = detail::jitter_box(o.box, prop_rng, 1.5, 0.07, 0.05);
    p.features = detail::proposal_features(world, o.features, prop_rng);
    p.gt_class = o.label;
    p.gt_box = o.box;
    scene.proposals.push_back(p);
    if (prop_rng.bernoulli(c.duplicate_prob)) {
      ProposalRecord d = p;
      d.id = next_id++;
      for (int attempt = 0; attempt < 10; ++attempt) {
        d.prior = detail::jitter_box(o.box, prop_rng, 3.0, 0.12, 0.12);
        if (rotated_iou(d.prior, o.box) >= 0.55) break;
        d.prior = detail::jitter_box(o.box, prop_rng, 1.0, 0.05, 0.05);
      }
      d.features = detail::proposal_features(world, o.features, prop_rng);
      scene.proposals.push_back(d);
    }
  }

  const int background = static_cast<int>(c.num_classes);
  for (std::size_t b = 0; b < c.background_proposals; ++b) {
    double x = 0.0, y = 0.0;
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      x = layout.uniform(margin, c.image_w - margin);
      y = layout.uniform(margin, c.image_h - margin);
      ok = true;
      for (const auto& o : objects)
        if (std::hypot(o.box.cx - x, o.box.cy - y) < 40.0) ok = false;
    }
    if (!ok) continue;
    const RotatedBox box(x, y, layout.uniform(14.0, 24.0), layout.uniform(8.0, 14.0),
                         layout.uniform(-std::numbers::pi / 2.0, std::numbers::pi / 2.0));
    const auto style = detail::draw_style(feat_rng, world.style_size(), c.style_scale);
    ProposalRecord p;
    p.id = next_id++;
    p.prior = box;
    p.features = detail::proposal_features(world, detail::object_features(world, background, style, feat_rng), prop_rng);
    p.gt_class = background;
    scene.proposals.push_back(p);
  }
  return scene;
}

inline SceneRecord generate_synthetic_scene(const SyntheticConfig& config, std::uint64_t seed) {
  return generate_synthetic_scene(SyntheticWorld(config), seed);
}

/// `count` scenes; scene i uses seed mix(seed, i).
inline Dataset generate_synthetic_dataset(const SyntheticConfig& config, std::size_t count, std::uint64_t seed) {
  const SyntheticWorld world(config);
  Dataset ds;
  for (std::size_t k = 0; k < config.num_classes; ++k) ds.class_names.push_back("class" + std::to_string(k));
  ds.channels = config.feature_channels;
  ds.height = config.feature_h;
  ds.width = config.feature_w;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t scene_seed = RngStream(seed).fork("scene-seed", i).next_u64();
    ds.scenes.push_back(generate_synthetic_scene(world, scene_seed, "scene-" + std::to_string(seed) + "-" + std::to_string(i)));
  }
  return ds;
}

}  // namespace uagdet
