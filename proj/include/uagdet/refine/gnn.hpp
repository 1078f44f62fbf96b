#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "uagdet/detection/head.hpp"
#include "uagdet/detection/proposal.hpp"
#include "uagdet/errors.hpp"
#include "uagdet/geometry/rotated_box.hpp"
#include "uagdet/graph/object_graph.hpp"
#include "uagdet/model_dims.hpp"
#include "uagdet/numeric/ops.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

/// Parameters of the graph refinement branch.
struct RefinerParams {
  Affine down_map;            // C -> down (1x1)
  ParamTensor class_embedding;  // [(num_classes + 1) x embed]
  Affine fuse_map;            // down + embed -> fuse (1x1)
  Affine gcn1;                // fuse -> gcn1 (1x1, after aggregation)
  Affine gcn2;                // gcn1 -> gcn2 (1x1, after aggregation)
  MlpHead cls_head_star;      // (C + gcn2) * positions -> hidden -> num_classes + 1
  std::size_t positions = 0;

  RefinerParams() = default;
  explicit RefinerParams(const ModelDims& d)
      : down_map(d.feature_channels, d.down_channels),
        class_embedding({d.num_logits(), d.embed_channels}),
        fuse_map(d.node_channels(), d.fuse_channels),
        gcn1(d.fuse_channels, d.gcn1_channels),
        gcn2(d.gcn1_channels, d.gcn2_channels),
        cls_head_star(d.refined_channels() * d.positions(), d.refine_hidden, d.num_logits()),
        positions(d.positions()) {}

  void init(RngStream rng) {
    init_affine(down_map, rng.fork("down_map"));
    RngStream er = rng.fork("class_embedding");
    for (double& v : class_embedding.value.data()) v = er.uniform(-1.0, 1.0);
    init_affine(fuse_map, rng.fork("fuse_map"));
    init_affine(gcn1, rng.fork("gcn1"));
    init_affine(gcn2, rng.fork("gcn2"));
    cls_head_star.init(rng.fork("cls_head_star"));
  }

  std::size_t feature_channels() const { return down_map.in(); }
  std::size_t down_channels() const { return down_map.out(); }
  std::size_t embed_channels() const { return class_embedding.value.extent(1); }
  std::size_t num_logits() const { return class_embedding.value.extent(0); }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    append_prefixed(out, "down_map", down_map.params());
    out.push_back({"class_embedding", &class_embedding});
    append_prefixed(out, "fuse_map", fuse_map.params());
    append_prefixed(out, "gcn1", gcn1.params());
    append_prefixed(out, "gcn2", gcn2.params());
    append_prefixed(out, "cls_head_star", cls_head_star.params());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Node features

/// down_map(f_conv) stacked over the embedding of argmax(p_init), broadcast
/// across positions. With use_embedding == false the embedding channels are zero.
inline Tensor init_node_features(std::span<const double> p_init, const Tensor& f_conv,
                                 const RefinerParams& params, bool use_embedding = true) {
  require_input(p_init.size() == params.num_logits(), "init_node_features: probability size mismatch");
  require_input(f_conv.rank() == 3 && f_conv.extent(0) == params.feature_channels() &&
                    f_conv.extent(1) * f_conv.extent(2) == params.positions,
                "init_node_features: feature shape " + shape_str(f_conv.shape()) + " mismatch");
  const std::size_t pos = params.positions;
  const std::size_t down = params.down_channels();
  const std::size_t embed = params.embed_channels();
  Tensor node({down + embed, f_conv.extent(1), f_conv.extent(2)});
  channel_map_forward(params.down_map, f_conv.data(), pos, node.data().subspan(0, down * pos));
  if (use_embedding) {
    const std::size_t cls = argmax(p_init);
    for (std::size_t e = 0; e < embed; ++e) {
      const double v = params.class_embedding.value[cls * embed + e];
      for (std::size_t p = 0; p < pos; ++p) node[(down + e) * pos + p] = v;
    }
  }
  return node;
}

/// Accumulates gradients of a node-feature tensor into down_map and the embedding row.
inline void node_features_backward(RefinerParams& params, const Tensor& f_conv, std::size_t cls,
                                   std::span<const double> d_node, bool use_embedding) {
  const std::size_t pos = params.positions;
  const std::size_t down = params.down_channels();
  const std::size_t embed = params.embed_channels();
  channel_map_backward(params.down_map, f_conv.data(), pos, d_node.subspan(0, down * pos), {});
  if (!use_embedding) return;
  for (std::size_t e = 0; e < embed; ++e) {
    double acc = 0.0;
    for (std::size_t p = 0; p < pos; ++p) acc += d_node[(down + e) * pos + p];
    params.class_embedding.grad[cls * embed + e] += acc;
  }
}

// ---------------------------------------------------------------------------
// Graph convolution

/// Intermediate values of the two-layer GCN over one graph. Node order is
/// src_ids followed by dst_ids.
struct GcnTrace {
  struct InEdge {
    std::size_t from;  // local index
    double weight;
  };
  std::size_t positions = 0;
  std::vector<std::size_t> ids;
  std::vector<std::vector<InEdge>> in_edges;
  std::vector<double> norm;  // 1 / (sum of in-weights + 1)
  std::vector<std::vector<double>> node, fused, agg1, z1, h1, agg2, out;
};

namespace detail {

// a_v = norm_v * (x_v + sum_{u->v} w_uv x_u)
inline void aggregate(const GcnTrace& t, const std::vector<std::vector<double>>& x,
                      std::vector<std::vector<double>>& a) {
  a.resize(x.size());
  for (std::size_t v = 0; v < x.size(); ++v) {
    a[v] = x[v];
    for (const auto& e : t.in_edges[v]) {
      const auto& xu = x[e.from];
      for (std::size_t i = 0; i < xu.size(); ++i) a[v][i] += e.weight * xu[i];
    }
    for (double& val : a[v]) val *= t.norm[v];
  }
}

inline void aggregate_backward(const GcnTrace& t, const std::vector<std::vector<double>>& da,
                               std::vector<std::vector<double>>& dx) {
  dx.assign(da.size(), {});
  for (std::size_t v = 0; v < da.size(); ++v) dx[v].assign(da[v].size(), 0.0);
  for (std::size_t v = 0; v < da.size(); ++v) {
    const double nv = t.norm[v];
    for (std::size_t i = 0; i < da[v].size(); ++i) dx[v][i] += nv * da[v][i];
    for (const auto& e : t.in_edges[v]) {
      const double s = nv * e.weight;
      for (std::size_t i = 0; i < da[v].size(); ++i) dx[e.from][i] += s * da[v][i];
    }
  }
}

}  // namespace detail

/// fuse_map -> aggregate -> gcn1 -> LeakyReLU -> aggregate -> gcn2.
/// Aggregation at v is the weighted mean of in-neighbors and v itself (self weight 1).
/// `node_features[i]` belongs to node i in (src_ids ++ dst_ids) order.
inline GcnTrace gcn_forward_trace(const ObjectGraph& graph, std::span<const Tensor> node_features,
                                  const RefinerParams& params) {
  GcnTrace t;
  t.positions = params.positions;
  t.ids = graph.src_ids;
  t.ids.insert(t.ids.end(), graph.dst_ids.begin(), graph.dst_ids.end());
  const std::size_t n = t.ids.size();
  require_input(node_features.size() == n,
                "gcn_forward: " + std::to_string(node_features.size()) + " node features for " +
                    std::to_string(n) + " graph nodes");
  std::unordered_map<std::size_t, std::size_t> local;
  for (std::size_t i = 0; i < n; ++i) local[t.ids[i]] = i;
  require_internal(local.size() == n, "gcn_forward: duplicate node ids");

  t.in_edges.assign(n, {});
  for (const auto& e : graph.edges) {
    auto s = local.find(e.src);
    auto d = local.find(e.dst);
    require_input(s != local.end() && d != local.end(), "gcn_forward: edge references unknown node");
    require_internal(s->second < graph.src_ids.size() && d->second >= graph.src_ids.size(),
                     "gcn_forward: edge is not source -> target");
    t.in_edges[d->second].push_back({s->second, e.weight});
  }
  t.norm.assign(n, 1.0);
  for (std::size_t v = 0; v < n; ++v) {
    double sum = 1.0;
    for (const auto& e : t.in_edges[v]) sum += e.weight;
    t.norm[v] = 1.0 / sum;
  }

  const std::size_t pos = params.positions;
  t.node.resize(n);
  t.fused.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    require_input(node_features[i].size() == params.fuse_map.in() * pos,
                  "gcn_forward: node feature shape mismatch");
    t.node[i] = node_features[i].values();
    t.fused[i].assign(params.fuse_map.out() * pos, 0.0);
    channel_map_forward(params.fuse_map, t.node[i], pos, t.fused[i]);
  }
  detail::aggregate(t, t.fused, t.agg1);
  t.z1.resize(n);
  t.h1.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.z1[i].assign(params.gcn1.out() * pos, 0.0);
    channel_map_forward(params.gcn1, t.agg1[i], pos, t.z1[i]);
    t.h1[i] = t.z1[i];
    leaky_relu_inplace(t.h1[i]);
  }
  detail::aggregate(t, t.h1, t.agg2);
  t.out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.out[i].assign(params.gcn2.out() * pos, 0.0);
    channel_map_forward(params.gcn2, t.agg2[i], pos, t.out[i]);
  }
  return t;
}

/// Returns f_gnn per node, shaped [gcn2 x H x W] like the inputs.
inline std::vector<Tensor> gcn_forward(const ObjectGraph& graph, std::span<const Tensor> node_features,
                                       const RefinerParams& params) {
  const GcnTrace t = gcn_forward_trace(graph, node_features, params);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < t.out.size(); ++i) {
    const Shape& s = node_features[i].shape();
    Shape shape = s.size() == 3 ? Shape{params.gcn2.out(), s[1], s[2]} : Shape{t.out[i].size()};
    out.emplace_back(shape, t.out[i]);
  }
  return out;
}

/// Accumulates parameter gradients and returns dL/d(node features) per node.
inline std::vector<std::vector<double>> gcn_backward(RefinerParams& params, const GcnTrace& t,
                                                     const std::vector<std::vector<double>>& d_out) {
  const std::size_t n = t.ids.size();
  const std::size_t pos = t.positions;
  require_input(d_out.size() == n, "gcn_backward: gradient count mismatch");
  std::vector<std::vector<double>> d_agg2(n), d_h1, d_agg1(n), d_fused, d_node(n);
  for (std::size_t i = 0; i < n; ++i) {
    d_agg2[i].assign(t.agg2[i].size(), 0.0);
    channel_map_backward(params.gcn2, t.agg2[i], pos, d_out[i], d_agg2[i]);
  }
  detail::aggregate_backward(t, d_agg2, d_h1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d_h1[i].size(); ++k) d_h1[i][k] *= leaky_relu_grad(t.z1[i][k]);
    d_agg1[i].assign(t.agg1[i].size(), 0.0);
    channel_map_backward(params.gcn1, t.agg1[i], pos, d_h1[i], d_agg1[i]);
  }
  detail::aggregate_backward(t, d_agg1, d_fused);
  for (std::size_t i = 0; i < n; ++i) {
    d_node[i].assign(t.node[i].size(), 0.0);
    channel_map_backward(params.fuse_map, t.node[i], pos, d_fused[i], d_node[i]);
  }
  return d_node;
}

// ---------------------------------------------------------------------------
// Refined classification head

/// f* = concat(f_conv, f_gnn) channel-wise, flattened.
inline std::vector<double> refined_input(const Tensor& f_conv, std::span<const double> f_gnn) {
  std::vector<double> f(f_conv.values());
  f.insert(f.end(), f_gnn.begin(), f_gnn.end());
  return f;
}

inline Tensor refine_classify(const Tensor& f_conv, const Tensor& f_gnn, const RefinerParams& params) {
  const std::vector<double> f = refined_input(f_conv, f_gnn.data());
  require_input(f.size() == params.cls_head_star.fc1.in(),
                "refine_classify: concatenated input has " + std::to_string(f.size()) +
                    " values, head expects " + std::to_string(params.cls_head_star.fc1.in()));
  MlpTrace trace;
  RngStream unused(0);
  mlp_forward(params.cls_head_star, f, 0.0, unused, false, trace);
  const std::size_t n = trace.out.size();
  return Tensor({n}, std::move(trace.out));
}

// ---------------------------------------------------------------------------
// Losses

/// Per-survivor loss weights: softmax(phi / tau) * N. Sums to N.
struct LossWeights {
  std::vector<double> w;
};

inline LossWeights uncertainty_weights(std::span<const double> phis, double tau) {
  require_input(!phis.empty(), "uncertainty_weights: no survivors");
  require_input(tau > 0.0, "uncertainty_weights: temperature must be positive");
  LossWeights out{softmax(phis, tau)};
  const double n = static_cast<double>(phis.size());
  for (double& v : out.w) v *= n;
  return out;
}

/// sum_i w_i * CE(logits_i, y_i); adds w_i * dCE/dlogits_i into `grads` when given.
inline double refinement_loss(std::span<const std::vector<double>> logits, std::span<const int> labels,
                              const LossWeights& weights,
                              std::vector<std::vector<double>>* grads = nullptr, double grad_scale = 1.0) {
  require_input(logits.size() == labels.size() && labels.size() == weights.w.size(),
                "refinement_loss: logits, labels, and weights differ in length");
  if (grads) grads->assign(logits.size(), {});
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    require_input(labels[i] >= 0, "refinement_loss: missing ground truth for survivor " + std::to_string(i));
    std::span<double> g;
    if (grads) {
      (*grads)[i].assign(logits[i].size(), 0.0);
      g = (*grads)[i];
    }
    loss += weights.w[i] * cross_entropy(logits[i], static_cast<std::size_t>(labels[i]), g,
                                         grad_scale * weights.w[i]);
  }
  return loss;
}

inline double total_loss(double l_obj, double l_ref, double lambda2) {
  return l_obj + lambda2 * l_ref;
}

// ---------------------------------------------------------------------------
// Scene-level forward/backward through the whole refinement branch

struct RefineOptions {
  bool use_class_embedding = true;
  double dropout_ratio = 0.0;
  bool training = false;
};

struct RefineTrace {
  std::vector<std::size_t> node_class;  // argmax(p_init) per node
  GcnTrace gcn;
  std::vector<std::vector<double>> f_star;
  std::vector<MlpTrace> head;
  std::vector<std::vector<double>> logits;  // per node, same order as gcn.ids
};

/// `nodes` must list the graph's sources then targets, matching src_ids ++ dst_ids.
inline RefineTrace refine_forward(const RefinerParams& params, const ObjectGraph& graph,
                                  std::span<const Proposal> nodes, const RefineOptions& opts,
                                  const RngStream& rng) {
  require_input(nodes.size() == graph.src_ids.size() + graph.dst_ids.size(),
                "refine_forward: node list does not match graph");
  RefineTrace r;
  std::vector<Tensor> node_feats;
  node_feats.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::size_t expected =
        i < graph.src_ids.size() ? graph.src_ids[i] : graph.dst_ids[i - graph.src_ids.size()];
    require_input(nodes[i].id == expected, "refine_forward: node order does not match graph");
    require_input(nodes[i].features != nullptr, "refine_forward: node without features");
    r.node_class.push_back(argmax(nodes[i].probs));
    node_feats.push_back(init_node_features(nodes[i].probs, *nodes[i].features, params,
                                            opts.use_class_embedding));
  }
  r.gcn = gcn_forward_trace(graph, node_feats, params);
  r.f_star.resize(nodes.size());
  r.head.resize(nodes.size());
  r.logits.resize(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    r.f_star[i] = refined_input(*nodes[i].features, r.gcn.out[i]);
    RngStream head_rng = rng.fork("refine_head", nodes[i].id);
    mlp_forward(params.cls_head_star, r.f_star[i], opts.dropout_ratio, head_rng, opts.training, r.head[i]);
    r.logits[i] = r.head[i].out;
  }
  return r;
}

/// Backpropagates dL/dlogits into RefinerParams. The f_conv part of f* is a
/// detached input and receives nothing.
inline void refine_backward(RefinerParams& params, const RefineTrace& r, std::span<const Proposal> nodes,
                            const std::vector<std::vector<double>>& d_logits, bool use_class_embedding) {
  const std::size_t n = r.logits.size();
  require_input(d_logits.size() == n && nodes.size() == n, "refine_backward: size mismatch");
  const std::size_t conv = nodes.empty() ? 0 : nodes[0].features->size();
  std::vector<std::vector<double>> d_gnn(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d_fstar(r.f_star[i].size(), 0.0);
    mlp_backward(params.cls_head_star, r.f_star[i], r.head[i], d_logits[i], d_fstar);
    d_gnn[i].assign(d_fstar.begin() + static_cast<std::ptrdiff_t>(conv), d_fstar.end());
  }
  const auto d_node = gcn_backward(params, r.gcn, d_gnn);
  for (std::size_t i = 0; i < n; ++i)
    node_features_backward(params, *nodes[i].features, r.node_class[i], d_node[i], use_class_embedding);
}

// ---------------------------------------------------------------------------
// Evaluation-time replacement

/// Detection of a survivor from its initial (MC) prediction.
inline Detection initial_detection(const Proposal& p) {
  return Detection{p.id, p.box, p.label, p.score, false};
}

/// Targets (V_dst) take label/score from softmax(refined logits) and keep their
/// box; every other record is copied unchanged.
inline std::vector<Detection> merge_results(
    std::span<const Detection> initial,
    const std::unordered_map<std::size_t, std::vector<double>>& refined_logits,
    std::span<const std::size_t> targets, std::size_t num_classes) {
  std::unordered_map<std::size_t, bool> is_target;
  for (std::size_t id : targets) is_target[id] = true;
  std::vector<Detection> out(initial.begin(), initial.end());
  for (auto& det : out) {
    if (!is_target.count(det.id)) continue;
    auto it = refined_logits.find(det.id);
    require_internal(it != refined_logits.end(),
                     "merge_results: no refined logits for target " + std::to_string(det.id));
    const std::vector<double> p = softmax(std::span<const double>(it->second));
    const auto [label, score] = foreground_label(p, num_classes);
    det.label = label;
    det.score = score;
    det.refined = true;
  }
  return out;
}

/// Standard-threshold NMS over final detections.
inline std::vector<Detection> final_nms(std::span<const Detection> dets, double score_thr,
                                        double iou_thr, bool per_class) {
  std::vector<RotatedBox> boxes;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& d : dets) {
    boxes.push_back(d.box);
    scores.push_back(d.score);
    labels.push_back(d.label);
  }
  const auto kept =
      nms(boxes, scores, iou_thr, score_thr, per_class ? std::span<const int>(labels) : std::span<const int>{});
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(dets[i]);
  return out;
}

}  // namespace uagdet
