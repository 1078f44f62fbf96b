#include <cmath>
#include <memory>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "uagdet/uncertainty/mc_dropout.hpp"

using namespace uagdet;

namespace {

ModelDims tiny_dims(std::size_t hidden) {
  ModelDims d;
  d.num_classes = 3;
  d.feature_channels = 3;
  d.feature_h = 1;
  d.feature_w = 2;
  d.head_hidden = hidden;
  return d;
}

HeadParams random_head(const ModelDims& d, std::uint64_t seed, double scale = 1.0) {
  HeadParams h(d);
  RngStream rng(seed);
  for (auto& ref : h.params())
    for (double& v : ref.param->value.data()) v = rng.normal(0.0, scale);
  return h;
}

Proposal scored(std::size_t id, const RotatedBox& box, double score, int label) {
  Proposal p;
  p.id = id;
  p.box = box;
  p.score = score;
  p.label = label;
  p.phi = 0.01 * static_cast<double>(id);
  p.probs = {score, 1.0 - score};
  return p;
}

// Per-pass softmax and regression outputs for an explicit cls/reg mask pair.
struct PassOutput {
  std::vector<double> probs;
  std::vector<double> box;
};

PassOutput run_pass(const HeadParams& h, const Tensor& f, std::span<const double> cm, std::span<const double> rm) {
  MlpTrace ct, rt;
  mlp_hidden(h.cls, f.data(), ct);
  mlp_hidden(h.reg, f.data(), rt);
  mlp_output(h.cls, cm, ct);
  mlp_output(h.reg, rm, rt);
  return {softmax(std::span<const double>(ct.out)), rt.out};
}

}  // namespace

TEST(UncertaintyScalar, MeanOfStds) {
  EXPECT_EQ(uncertainty_scalar(std::vector<double>{0.0, 0.0, 0.0}), 0.0);
  EXPECT_EQ(uncertainty_scalar(std::vector<double>{0.37}), 0.37);
  EXPECT_NEAR(uncertainty_scalar(std::vector<double>{0.1, 0.3}), 0.2, 1e-15);
  EXPECT_THROW(uncertainty_scalar(std::vector<double>{}), InputError);
}

TEST(McDetect, ZeroRatioOrSinglePassHasZeroPhi) {
  const ModelDims d = tiny_dims(5);
  const HeadParams h = random_head(d, 1);
  RngStream data(2);
  const Tensor f = oracle::random_tensor(data, {3, 1, 2});
  RngStream unused(0);
  const Tensor logits = cls_forward(f, h, unused, 0.0, false);
  const auto det = softmax(std::span<const double>(logits.data()));

  for (std::size_t m : {1u, 7u, 40u}) {
    const McResult r = mc_detect(f, h, m, 0.0, RngStream(3));
    EXPECT_EQ(r.phi, 0.0);
    for (std::size_t c = 0; c < det.size(); ++c) EXPECT_NEAR(r.p_mean[c], det[c], 1e-15);
  }
  EXPECT_EQ(mc_detect(f, h, 1, 0.6, RngStream(3)).phi, 0.0);
  EXPECT_THROW(mc_detect(f, h, 0, 0.2, RngStream(3)), InputError);
  EXPECT_THROW(mc_detect(f, h, 5, 1.0, RngStream(3)), InputError);
}

TEST(McDetect, MeanProbabilitiesSumToOne) {
  const ModelDims d = tiny_dims(8);
  RngStream data(4);
  for (int trial = 0; trial < 50; ++trial) {
    const HeadParams h = random_head(d, 100 + trial, 2.0);
    const Tensor f = oracle::random_tensor(data, {3, 1, 2});
    const McResult r = mc_detect(f, h, 30, 0.3, RngStream(trial));
    double s = 0.0;
    for (double p : r.p_mean) {
      EXPECT_GE(p, 0.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_GE(r.phi, 0.0);
  }
}

TEST(McDetect, InjectedMasksMatchExhaustiveEnumeration) {
  // Two hidden units at ratio 0.5: each mask is one of {0,2}^2, all equally likely.
  const ModelDims d = tiny_dims(2);
  const HeadParams h = random_head(d, 5, 1.5);
  RngStream data(6);
  const Tensor f = oracle::random_tensor(data, {3, 1, 2}, 2.0);
  const std::vector<std::vector<double>> masks{{0, 0}, {0, 2}, {2, 0}, {2, 2}};

  const std::size_t k = d.num_logits();
  std::vector<PassOutput> outs;
  for (const auto& m : masks) outs.push_back(run_pass(h, f, m, m));
  std::vector<double> mean(k, 0.0), var(k, 0.0), m4(k, 0.0), box(5, 0.0);
  for (const auto& o : outs) {
    for (std::size_t c = 0; c < k; ++c) mean[c] += o.probs[c] / 4.0;
    for (std::size_t i = 0; i < 5; ++i) box[i] += o.box[i] / 4.0;
  }
  for (const auto& o : outs)
    for (std::size_t c = 0; c < k; ++c) {
      const double dv = o.probs[c] - mean[c];
      var[c] += dv * dv / 4.0;
      m4[c] += dv * dv * dv * dv / 4.0;
    }
  double phi = 0.0;
  for (std::size_t c = 0; c < k; ++c) phi += std::sqrt(var[c]) / static_cast<double>(k);
  ASSERT_GT(phi, 1e-3);

  const McResult exact = mc_detect_with_masks(f, h, 4, [&](std::size_t j, std::span<double> cm, std::span<double> rm) {
    std::copy(masks[j].begin(), masks[j].end(), cm.begin());
    std::copy(masks[j].begin(), masks[j].end(), rm.begin());
  });
  for (std::size_t c = 0; c < k; ++c) EXPECT_NEAR(exact.p_mean[c], mean[c], 1e-14);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(exact.box_mean[i], box[i], 1e-12);
  EXPECT_NEAR(exact.phi, phi, 1e-14);

  // Sampled masks converge to the enumeration within Monte Carlo error.
  const std::size_t big_m = 100000;
  const McResult mc = mc_detect(f, h, big_m, 0.5, RngStream(7));
  const double root_m = std::sqrt(static_cast<double>(big_m));
  double phi_tol = 0.0, phi_expected = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    EXPECT_NEAR(mc.p_mean[c], mean[c], 3.0 * std::sqrt(var[c]) / root_m + 1e-12);
    // Delta-method mean and stdev of the population-form sample standard deviation.
    const double sd = std::sqrt(var[c]);
    const double kurt = m4[c] / (var[c] * var[c]);
    const double sd_of_sd = std::sqrt(std::max(m4[c] - var[c] * var[c], 0.0) / (4.0 * var[c] * big_m));
    const double expected = sd * (1.0 - 1.0 / (2.0 * big_m) - (kurt - 1.0) / (8.0 * big_m));
    EXPECT_NEAR(mc.class_std[c], expected, 3.0 * sd_of_sd + 1e-9);
    phi_expected += expected / static_cast<double>(k);
    phi_tol += 3.0 * sd_of_sd / static_cast<double>(k);
  }
  EXPECT_NEAR(mc.phi, phi_expected, phi_tol);
  EXPECT_NEAR(mc.phi, phi, phi_tol + std::abs(phi - phi_expected));
}

TEST(McDetect, DeterministicAcrossThreads) {
  const ModelDims d = tiny_dims(16);
  const HeadParams h = random_head(d, 8);
  RngStream data(9);
  std::vector<Tensor> feats;
  for (int i = 0; i < 12; ++i) feats.push_back(oracle::random_tensor(data, {3, 1, 2}));
  const RngStream root(10);

  auto run_with = [&](std::size_t threads) {
    std::vector<McResult> out(feats.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < feats.size(); i += threads) out[i] = mc_detect(feats[i], h, 50, 0.2, root.fork("obj", i));
      });
    for (auto& th : pool) th.join();
    return out;
  };
  const auto a = run_with(1);
  const auto b = run_with(4);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    EXPECT_EQ(a[i].p_mean, b[i].p_mean);
    EXPECT_EQ(a[i].box_mean, b[i].box_mean);
    EXPECT_EQ(a[i].phi, b[i].phi);
    EXPECT_GT(a[i].phi, 0.0);
  }
}

TEST(McDetect, MakeProposalUsesForegroundArgmaxAndMeanBox) {
  const ModelDims d = tiny_dims(4);
  ProposalRecord rec;
  rec.id = 17;
  rec.prior = RotatedBox(50, 60, 10, 5, 0.2);
  rec.gt_class = 2;
  McResult mc;
  mc.p_mean = {0.1, 0.25, 0.15, 0.5};
  mc.box_mean = {0, 0, 0, 0, 0};
  mc.phi = 0.125;
  const Proposal p = make_proposal(rec, mc, d.num_classes);
  EXPECT_EQ(p.id, 17u);
  EXPECT_EQ(p.label, 1);
  EXPECT_EQ(p.score, 0.25);
  EXPECT_EQ(p.phi, 0.125);
  EXPECT_EQ(p.box, rec.prior);
  EXPECT_EQ(p.gt_class, 2);
}

TEST(RelaxedNms, ThresholdCases) {
  const NmsSettings usual;
  const RotatedBox b(0, 0, 10, 10, 0);
  EXPECT_TRUE(relaxed_nms(std::vector<Proposal>{scored(0, b, 0.004, 0), scored(1, b, 0.001, 1)}, usual).empty());

  // 0.006 is below the usual 0.05 threshold but above the relaxed one.
  const auto kept = relaxed_nms(std::vector<Proposal>{scored(3, b, 0.006, 0)}, usual);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].id, 3u);
  EXPECT_EQ(kept[0].phi, 0.03);
  EXPECT_EQ(kept[0].probs, (std::vector<double>{0.006, 0.994}));

  // IoU mode keeps the usual score threshold and relaxes the overlap cut.
  const std::vector<Proposal> pair{scored(0, b, 0.9, 0), scored(1, RotatedBox(6, 0, 10, 10, 0), 0.8, 0)};
  EXPECT_EQ(relaxed_nms(pair, usual).size(), 2u);
  EXPECT_EQ(relaxed_nms(pair, usual, RelaxMode::Iou).size(), 1u);
}

TEST(RelaxedNms, ClusterMatchesOracle) {
  RngStream rng(11);
  const NmsSettings usual;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Proposal> props;
    std::vector<RotatedBox> boxes;
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < 5; ++i) {
      const RotatedBox box(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(6, 12), rng.uniform(6, 12),
                           rng.uniform(-1.5, 1.5));
      const double s = rng.uniform(0.0, 0.02);
      const int l = static_cast<int>(rng.uniform_int(0, 1));
      props.push_back(scored(i, box, s, l));
      boxes.push_back(box);
      scores.push_back(s);
      labels.push_back(l);
    }
    const auto expect = oracle::nms(boxes, scores, usual.iou_thr, 0.005, labels);
    const auto got = relaxed_nms(props, usual);
    ASSERT_EQ(got.size(), expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].id, expect[i]);
  }
}
