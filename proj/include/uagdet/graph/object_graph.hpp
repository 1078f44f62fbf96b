#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <tuple>
#include <vector>

#include "uagdet/detection/proposal.hpp"
#include "uagdet/errors.hpp"
#include "uagdet/geometry/rotated_box.hpp"
#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

struct GraphEdge {
  std::size_t src = 0;  // proposal id in V_src
  std::size_t dst = 0;  // proposal id in V_dst
  double weight = 0.0;
  double d_spa = 0.0;
  double d_sem = 0.0;
  bool spatial = false;   // d_spa < thr_spa
  bool semantic = false;  // d_sem < thr_sem
};

/// Directed bipartite graph; edges only run from a source to a target and are
/// sorted by (src, dst).
struct ObjectGraph {
  std::vector<std::size_t> src_ids;
  std::vector<std::size_t> dst_ids;
  std::vector<GraphEdge> edges;
};

struct UncertaintySplit {
  std::vector<Proposal> sources;    // low phi
  std::vector<Proposal> targets;    // high phi
  std::vector<Proposal> discarded;  // beyond the cap
};

/// Sorts by (phi, id) ascending, keeps at most `cap`, and puts the first
/// ceil(n/2) in the source set.
inline UncertaintySplit split_by_uncertainty(std::span<const Proposal> survivors, std::size_t cap) {
  std::vector<std::size_t> order(survivors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(survivors[a].phi, survivors[a].id) < std::tie(survivors[b].phi, survivors[b].id);
  });
  UncertaintySplit split;
  const std::size_t kept = std::min(cap, order.size());
  const std::size_t n_src = (kept + 1) / 2;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Proposal& p = survivors[order[r]];
    if (r < n_src)
      split.sources.push_back(p);
    else if (r < kept)
      split.targets.push_back(p);
    else
      split.discarded.push_back(p);
  }
  return split;
}

inline double spatial_distance(const Proposal& a, const Proposal& b) {
  return std::hypot(a.box.cx - b.box.cx, a.box.cy - b.box.cy);
}

inline double semantic_distance(const Tensor& a, const Tensor& b) {
  require_input(a.shape() == b.shape(), "semantic_distance: feature shapes differ: " +
                                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double semantic_distance(const Proposal& a, const Proposal& b) {
  require_input(a.features && b.features, "semantic_distance: proposal without features");
  return semantic_distance(*a.features, *b.features);
}

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> inv_scale;  // 1 / stdev, or 1 where the stdev is zero
};

/// Per-coordinate mean and inverse population stdev over a set of feature maps.
inline FeatureStats feature_stats(std::span<const Tensor* const> features) {
  FeatureStats st;
  if (features.empty()) return st;
  const std::size_t n = features.size();
  const std::size_t dim = features[0]->size();
  for (const Tensor* f : features)
    require_input(f->shape() == features[0]->shape(), "feature_stats: shape mismatch");
  st.mean.assign(dim, 0.0);
  st.inv_scale.assign(dim, 0.0);
  for (const Tensor* f : features)
    for (std::size_t i = 0; i < dim; ++i) st.mean[i] += (*f)[i];
  for (double& m : st.mean) m /= static_cast<double>(n);
  for (const Tensor* f : features)
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = (*f)[i] - st.mean[i];
      st.inv_scale[i] += d * d;
    }
  for (double& s : st.inv_scale) {
    s = std::sqrt(s / static_cast<double>(n));
    s = s > 0.0 ? 1.0 / s : 1.0;
  }
  return st;
}

inline Tensor standardize(const Tensor& f, const FeatureStats& st) {
  require_input(f.size() == st.mean.size(), "standardize: feature size does not match statistics");
  Tensor t(f.shape());
  for (std::size_t i = 0; i < f.size(); ++i) t[i] = (f[i] - st.mean[i]) * st.inv_scale[i];
  return t;
}

/// Zero mean, unit variance per coordinate over the given set. Coordinates
/// with zero variance are only centered.
inline std::vector<Tensor> standardize_features(std::span<const Tensor* const> features) {
  const FeatureStats st = feature_stats(features);
  std::vector<Tensor> out;
  out.reserve(features.size());
  for (const Tensor* f : features) out.push_back(standardize(*f, st));
  return out;
}

enum class EdgeWeightMode {
  InverseProduct,  // 1 / (d_spa * diag)
  DiagOverDist,    // diag / d_spa
};

struct GraphSettings {
  double thr_spa = 50.0;
  double thr_sem = 10.0;
  bool spatial_edges = true;
  bool semantic_edges = true;
  bool standardize = true;
  EdgeWeightMode weight_mode = EdgeWeightMode::InverseProduct;
  double min_distance = 1e-6;
};

inline double edge_weight(double d_spa, double image_diag, const GraphSettings& s) {
  const double d = std::max(d_spa, s.min_distance);
  return s.weight_mode == EdgeWeightMode::InverseProduct ? 1.0 / (d * image_diag) : image_diag / d;
}

/// Adds edge (s, d) when d_spa < thr_spa or d_sem < thr_sem (each criterion
/// switchable). With `standardize` set, semantic distances use features
/// standardized with statistics of `reference` (all survivors of the scene),
/// or of V_src and V_dst together when `reference` is empty.
inline ObjectGraph build_graph(std::span<const Proposal> sources, std::span<const Proposal> targets,
                               const GraphSettings& settings, double image_diag,
                               std::span<const Proposal> reference = {}) {
  require_input(image_diag > 0.0, "build_graph: image diagonal must be positive");
  ObjectGraph g;
  for (const auto& s : sources) g.src_ids.push_back(s.id);
  for (const auto& t : targets) g.dst_ids.push_back(t.id);

  std::vector<const Tensor*> raw;
  for (const auto& s : sources) raw.push_back(s.features.get());
  for (const auto& t : targets) raw.push_back(t.features.get());
  for (const Tensor* f : raw) require_input(f != nullptr, "build_graph: proposal without features");
  std::vector<Tensor> standardized;
  if (settings.standardize && settings.semantic_edges) {
    std::vector<const Tensor*> ref;
    for (const auto& p : reference) {
      require_input(p.features != nullptr, "build_graph: reference proposal without features");
      ref.push_back(p.features.get());
    }
    const FeatureStats st = feature_stats(ref.empty() ? std::span<const Tensor* const>(raw) : ref);
    for (const Tensor* f : raw) standardized.push_back(standardize(*f, st));
  }
  auto feat = [&](std::size_t node) -> const Tensor& {
    return standardized.empty() ? *raw[node] : standardized[node];
  };

  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (std::size_t j = 0; j < targets.size(); ++j) {
      GraphEdge e;
      e.src = sources[i].id;
      e.dst = targets[j].id;
      e.d_spa = spatial_distance(sources[i], targets[j]);
      e.spatial = settings.spatial_edges && e.d_spa < settings.thr_spa;
      if (settings.semantic_edges) {
        e.d_sem = semantic_distance(feat(i), feat(sources.size() + j));
        e.semantic = e.d_sem < settings.thr_sem;
      } else {
        e.d_sem = std::numeric_limits<double>::infinity();
      }
      if (!e.spatial && !e.semantic) continue;
      e.weight = edge_weight(e.d_spa, image_diag, settings);
      g.edges.push_back(e);
    }
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const GraphEdge& a, const GraphEdge& b) {
    return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
  });
  return g;
}

/// Diagnostic dump: one edge per line, "src_id dst_id weight d_spa d_sem".
inline void write_graph_dump(std::ostream& os, const ObjectGraph& g) {
  os << std::setprecision(17);
  for (const auto& e : g.edges)
    os << e.src << ' ' << e.dst << ' ' << e.weight << ' ' << e.d_spa << ' ' << e.d_sem << '\n';
}

}  // namespace uagdet
