#include <cmath>
#include <memory>
#include <unordered_map>
#include <vector>

#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "uagdet/refine/gnn.hpp"

using namespace uagdet;

namespace {

RefinerParams init_refiner(const ModelDims& d, std::uint64_t seed) {
  RefinerParams p(d);
  p.init(RngStream(seed));
  return p;
}

}  // namespace

TEST(NodeFeatures, DownMapPlusBroadcastEmbedding) {
  const ModelDims d = checks::tiny_dims();
  const RefinerParams params = init_refiner(d, 1);
  RngStream rng(2);
  const Tensor f = oracle::random_tensor(rng, {d.feature_channels, d.feature_h, d.feature_w});
  const std::vector<double> p{0.1, 0.2, 0.6, 0.1};
  const Tensor node = init_node_features(p, f, params);
  ASSERT_EQ(node.shape(), (Shape{d.node_channels(), d.feature_h, d.feature_w}));
  const Tensor down = channel_map_1x1(f, params.down_map);
  const std::size_t pos = d.positions();
  for (std::size_t i = 0; i < down.size(); ++i) EXPECT_EQ(node[i], down[i]);
  for (std::size_t e = 0; e < d.embed_channels; ++e)
    for (std::size_t q = 0; q < pos; ++q)
      EXPECT_EQ(node[(d.down_channels + e) * pos + q], params.class_embedding.value[2 * d.embed_channels + e]);

  const Tensor plain = init_node_features(p, f, params, false);
  for (std::size_t i = down.size(); i < plain.size(); ++i) EXPECT_EQ(plain[i], 0.0);

  // Background argmax selects the background row.
  const Tensor bg = init_node_features(std::vector<double>{0.1, 0.1, 0.1, 0.7}, f, params);
  EXPECT_EQ(bg[d.down_channels * pos], params.class_embedding.value[3 * d.embed_channels]);

  EXPECT_THROW(init_node_features(std::vector<double>{0.5, 0.5}, f, params), InputError);
  EXPECT_THROW(init_node_features(p, Tensor({d.feature_channels + 1, d.feature_h, d.feature_w}), params), InputError);
}

TEST(Gcn, MatchesDenseOracleOnRandomGraphs) {
  const auto r = checks::gcn_suite(200, 3);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Gcn, IsolatedNodeIsAPlainChannelStack) {
  const ModelDims d = checks::tiny_dims();
  const RefinerParams params = init_refiner(d, 4);
  RngStream rng(5);
  ObjectGraph g;
  g.src_ids = {3};
  const Tensor x = oracle::random_tensor(rng, {d.node_channels(), d.feature_h, d.feature_w});
  const auto out = gcn_forward(g, std::vector<Tensor>{x}, params);
  Tensor h = channel_map_1x1(channel_map_1x1(x, params.fuse_map), params.gcn1);
  for (double& v : h.data()) v = leaky_relu(v);
  const Tensor expect = channel_map_1x1(h, params.gcn2);
  ASSERT_EQ(out[0].shape(), expect.shape());
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(out[0][i], expect[i]);
}

TEST(Gcn, OneEdgeWeightedMean) {
  const ModelDims d = checks::tiny_dims();
  const RefinerParams params = init_refiner(d, 6);
  RngStream rng(7);
  ObjectGraph g;
  g.src_ids = {1};
  g.dst_ids = {2};
  GraphEdge e;
  e.src = 1;
  e.dst = 2;
  e.weight = 3.0;
  g.edges.push_back(e);
  const std::vector<Tensor> feats{oracle::random_tensor(rng, {d.node_channels(), d.feature_h, d.feature_w}),
                                  oracle::random_tensor(rng, {d.node_channels(), d.feature_h, d.feature_w})};
  const GcnTrace t = gcn_forward_trace(g, feats, params);
  for (std::size_t k = 0; k < t.fused[0].size(); ++k) {
    EXPECT_EQ(t.agg1[0][k], t.fused[0][k]);  // sources receive nothing
    EXPECT_NEAR(t.agg1[1][k], (3.0 * t.fused[0][k] + t.fused[1][k]) / 4.0, 1e-14);
  }
  for (std::size_t k = 0; k < t.h1[0].size(); ++k)
    EXPECT_NEAR(t.agg2[1][k], (3.0 * t.h1[0][k] + t.h1[1][k]) / 4.0, 1e-14);

  ObjectGraph reversed = g;
  reversed.edges[0].src = 2;
  reversed.edges[0].dst = 1;
  EXPECT_THROW(gcn_forward_trace(reversed, feats, params), InternalError);
  EXPECT_THROW(gcn_forward_trace(g, std::vector<Tensor>{feats[0]}, params), InputError);
}

TEST(Gradients, FiniteDifferencesAcrossBlocks) {
  for (const auto& r : checks::gradient_reports(8)) {
    EXPECT_LT(r.result.max_rel_error, 1e-4)
        << r.name << ": " << r.result.worst_param << "[" << r.result.worst_index << "] analytic " << r.result.analytic
        << " numeric " << r.result.numeric;
    EXPECT_GT(r.result.coords_checked, 0u) << r.name;
  }
}

TEST(Gradients, RefinementLossLeavesHeadsUntouched) {
  const auto r = checks::head_isolation_check(9);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(RefineClassify, ConcatenatesConvAndGraphFeatures) {
  const ModelDims d = checks::tiny_dims();
  const RefinerParams params = init_refiner(d, 10);
  RngStream rng(11);
  const Tensor f = oracle::random_tensor(rng, {d.feature_channels, d.feature_h, d.feature_w});
  const Tensor gnn = oracle::random_tensor(rng, {d.gcn2_channels, d.feature_h, d.feature_w});
  const auto in = refined_input(f, gnn.data());
  ASSERT_EQ(in.size(), f.size() + gnn.size());
  EXPECT_EQ(in[0], f[0]);
  EXPECT_EQ(in[f.size()], gnn[0]);
  const Tensor logits = refine_classify(f, gnn, params);
  EXPECT_EQ(logits.size(), d.num_logits());
  EXPECT_THROW(refine_classify(f, Tensor({d.gcn2_channels + 1, d.feature_h, d.feature_w}), params), InputError);
}

TEST(LossWeights, PropertiesAndHandCase) {
  const auto w = uncertainty_weights(std::vector<double>{0.0, 0.1}, 0.1).w;
  EXPECT_NEAR(w[0], 0.53788, 1e-5);
  EXPECT_NEAR(w[1], 1.46212, 1e-5);
  EXPECT_NEAR(w[0], 2.0 / (1.0 + std::exp(1.0)), 1e-15);
  const auto equal = uncertainty_weights(std::vector<double>{0.2, 0.2, 0.2}, 0.1).w;
  for (double v : equal) EXPECT_NEAR(v, 1.0, 1e-15);
  EXPECT_THROW(uncertainty_weights(std::vector<double>{}, 0.1), InputError);
  EXPECT_THROW(uncertainty_weights(std::vector<double>{0.1}, 0.0), InputError);
  const auto r = checks::loss_weight_suite(300, 12);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(RefinementLoss, WeightedCrossEntropy) {
  const std::vector<std::vector<double>> logits{{1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
  const std::vector<int> labels{0, 2};
  const double ce0 = cross_entropy(logits[0], 0), ce1 = std::log(3.0);
  EXPECT_NEAR(refinement_loss(logits, labels, LossWeights{{1.0, 1.0}}), ce0 + ce1, 1e-14);
  EXPECT_NEAR(refinement_loss(logits, labels, LossWeights{{0.5, 1.5}}), 0.5 * ce0 + 1.5 * ce1, 1e-14);

  std::vector<std::vector<double>> grads;
  refinement_loss(logits, labels, LossWeights{{0.5, 1.5}}, &grads, 2.0);
  EXPECT_NEAR(grads[1][0], 2.0 * 1.5 / 3.0, 1e-14);
  EXPECT_NEAR(grads[1][2], 2.0 * 1.5 * (1.0 / 3.0 - 1.0), 1e-14);

  EXPECT_THROW(refinement_loss(logits, std::vector<int>{0}, LossWeights{{1.0, 1.0}}), InputError);
  EXPECT_THROW(refinement_loss(logits, std::vector<int>{0, -1}, LossWeights{{1.0, 1.0}}), InputError);
  EXPECT_EQ(total_loss(1.5, 2.0, 0.5), 2.5);
  EXPECT_EQ(total_loss(1.5, 2.0, 0.0), 1.5);
}

TEST(RefineForward, RequiresGraphNodeOrder) {
  const ModelDims d = checks::tiny_dims();
  const RefinerParams params = init_refiner(d, 13);
  RngStream rng(14);
  auto nodes = checks::random_nodes(rng, d, 4);
  const ObjectGraph g = checks::random_graph(rng, nodes, 1.0);
  const auto r = refine_forward(params, g, nodes, {}, RngStream(0));
  EXPECT_EQ(r.logits.size(), 4u);
  std::swap(nodes[0], nodes[3]);
  EXPECT_THROW(refine_forward(params, g, nodes, {}, RngStream(0)), InputError);
  nodes.pop_back();
  EXPECT_THROW(refine_forward(params, g, nodes, {}, RngStream(0)), InputError);
}

TEST(Merge, TargetsRelabelledOthersUntouched) {
  const std::size_t k = 3;
  const std::vector<Detection> initial{{1, RotatedBox(10, 10, 5, 4, 0.1), 0, 0.7, false},
                                       {2, RotatedBox(30, 10, 5, 4, 0.2), 1, 0.4, false},
                                       {3, RotatedBox(50, 10, 5, 4, 0.3), 2, 0.3, false}};
  std::unordered_map<std::size_t, std::vector<double>> logits{{1, {5, 0, 0, 0}}, {2, {0, 0, 3, 0}}, {3, {0, 0, 0, 0}}};
  const std::vector<std::size_t> targets{2};
  const auto merged = merge_results(initial, logits, targets, k);
  ASSERT_EQ(merged.size(), 3u);
  EXPECT_EQ(merged[0], initial[0]);
  EXPECT_EQ(merged[2], initial[2]);
  EXPECT_EQ(merged[1].label, 2);
  EXPECT_NEAR(merged[1].score, std::exp(3.0) / (std::exp(3.0) + 3.0), 1e-15);
  EXPECT_TRUE(merged[1].refined);
  EXPECT_EQ(merged[1].box, initial[1].box);
  EXPECT_EQ(merged[1].id, 2u);

  EXPECT_EQ(merge_results(initial, logits, std::vector<std::size_t>{}, k), initial);
  logits.erase(2);
  EXPECT_THROW(merge_results(initial, logits, targets, k), InternalError);
}

TEST(Merge, FinalNmsKeepsRecordsIntact) {
  const std::vector<Detection> dets{{1, RotatedBox(10, 10, 10, 10, 0), 0, 0.7, true},
                                    {2, RotatedBox(11, 10, 10, 10, 0), 0, 0.6, false},
                                    {3, RotatedBox(11, 10, 10, 10, 0), 1, 0.6, false},
                                    {4, RotatedBox(80, 80, 10, 10, 0), 1, 0.01, false}};
  const auto kept = final_nms(dets, 0.05, 0.5, true);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0], dets[0]);
  EXPECT_EQ(kept[1], dets[2]);
  EXPECT_EQ(final_nms(dets, 0.05, 0.5, false).size(), 1u);
}
