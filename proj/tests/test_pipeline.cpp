#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "uagdet/uagdet.hpp"

using namespace uagdet;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("uagdet_test_" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

// Four classes, two context pairs, 1x1 features.
SyntheticConfig small_synth() {
  SyntheticConfig c;
  c.num_classes = 4;
  c.feature_channels = 6;
  c.feature_h = 1;
  c.feature_w = 1;
  c.appearance_channels = 4;
  c.context_of = {{0, 2}, {1, 3}};
  c.confusable = {{0, 1}};
  c.image_w = 600;
  c.image_h = 600;
  c.min_objects = 12;
  c.max_objects = 20;
  c.background_proposals = 4;
  return c;
}

PipelineConfig small_pipeline(const SyntheticConfig& s) {
  PipelineConfig cfg;
  cfg.synth = s;
  cfg.dims.num_classes = s.num_classes;
  cfg.dims.feature_channels = s.feature_channels;
  cfg.dims.feature_h = s.feature_h;
  cfg.dims.feature_w = s.feature_w;
  cfg.dims.head_hidden = 16;
  cfg.dims.down_channels = 4;
  cfg.dims.embed_channels = 4;
  cfg.dims.fuse_channels = 6;
  cfg.dims.gcn1_channels = 4;
  cfg.dims.gcn2_channels = 3;
  cfg.dims.refine_hidden = 16;
  cfg.mc_passes = 6;
  cfg.epochs = 2;
  cfg.lr = 0.05;
  cfg.mean_loss = true;
  cfg.graph.weight_mode = EdgeWeightMode::DiagOverDist;
  return cfg;
}

void expect_same_dataset(const Dataset& a, const Dataset& b) {
  EXPECT_EQ(a.class_names, b.class_names);
  EXPECT_EQ(a.feature_shape(), b.feature_shape());
  ASSERT_EQ(a.scenes.size(), b.scenes.size());
  for (std::size_t s = 0; s < a.scenes.size(); ++s) {
    const auto& x = a.scenes[s];
    const auto& y = b.scenes[s];
    EXPECT_EQ(x.scene_id, y.scene_id);
    EXPECT_EQ(x.image_w, y.image_w);
    EXPECT_EQ(x.image_h, y.image_h);
    EXPECT_EQ(x.gt_objects, y.gt_objects);
    ASSERT_EQ(x.proposals.size(), y.proposals.size());
    for (std::size_t i = 0; i < x.proposals.size(); ++i) {
      const auto& p = x.proposals[i];
      const auto& q = y.proposals[i];
      EXPECT_EQ(p.id, q.id);
      EXPECT_EQ(p.prior, q.prior);
      EXPECT_EQ(p.gt_class, q.gt_class);
      EXPECT_EQ(p.gt_box, q.gt_box);
      EXPECT_EQ(*p.features, *q.features);
    }
  }
}

std::vector<double> all_values(Model& m) {
  std::vector<double> out;
  for (const auto& p : m.params()) out.insert(out.end(), p.param->value.data().begin(), p.param->value.data().end());
  return out;
}

}  // namespace

TEST(Config, RoundTripAndErrors) {
  PipelineConfig c;
  c.mc_passes = 33;
  c.graph.thr_sem = 4.5;
  c.graph.weight_mode = EdgeWeightMode::DiagOverDist;
  c.synth.confusable = {{1, 2}};
  c.use_class_embedding = false;
  c.dims.gcn2_channels = 7;
  const std::string text = config_to_string(c);
  const PipelineConfig back = parse_config_string(text);
  EXPECT_EQ(config_to_string(back), text);
  EXPECT_EQ(back.mc_passes, 33u);
  EXPECT_EQ(back.graph.weight_mode, EdgeWeightMode::DiagOverDist);
  EXPECT_EQ(back.synth.confusable, (std::vector<std::pair<int, int>>{{1, 2}}));
  EXPECT_EQ(back.dims.gcn2_channels, 7u);

  EXPECT_EQ(parse_config_string("# comment\n\nmc_passes = 5\n").mc_passes, 5u);
  EXPECT_THROW(parse_config_string("no_such_key = 1\n"), InputError);
  EXPECT_THROW(parse_config_string("mc_passes = many\n"), InputError);
  EXPECT_THROW(parse_config_string("mc_passes\n"), InputError);
  EXPECT_THROW(parse_config_string("mc_passes = 0\n"), InputError);
  EXPECT_THROW(parse_config_string("dropout_ratio = 1.0\n"), InputError);
  EXPECT_THROW(load_config("/nonexistent/file.cfg"), InputError);
}

TEST(Config, DeskConfigLoads) {
  const PipelineConfig c = load_config(std::string(UAGDET_SOURCE_DIR) + "/configs/desk.cfg");
  EXPECT_EQ(c.dims.num_classes, 8u);
  EXPECT_EQ(c.dims.num_classes, c.synth.num_classes);
  EXPECT_EQ(c.dims.feature_channels, c.synth.feature_channels);
  EXPECT_LE(c.epochs, 12u);
  EXPECT_EQ(c.synth.confusable.size(), 2u);
  EXPECT_EQ(c.synth.min_objects, 30u);
  EXPECT_EQ(c.synth.max_objects, 80u);
}

TEST(SceneIo, BinaryTextAndIndexRoundTrip) {
  TempDir dir;
  const Dataset ds = generate_synthetic_dataset(small_synth(), 4, 11);
  save_dataset(dir.file("d.bin"), ds);
  save_dataset(dir.file("d.txt"), ds);
  expect_same_dataset(ds, load_dataset(dir.file("d.bin")));
  expect_same_dataset(ds, load_dataset(dir.file("d.txt")));

  Dataset header;
  const SceneRecord third = read_scene_at(dir.file("d.bin"), 2, &header);
  Dataset one = header;
  one.scenes = {third};
  Dataset expect = ds;
  expect.scenes = {ds.scenes[2]};
  expect_same_dataset(expect, one);

  std::ostringstream a, b;
  write_dataset_text(a, ds);
  std::istringstream in(a.str());
  write_dataset_text(b, read_dataset_text(in));
  EXPECT_EQ(a.str(), b.str());

  EXPECT_THROW(read_scene_at(dir.file("d.bin"), 4), InputError);
  EXPECT_THROW(load_dataset(dir.file("missing.bin")), InputError);
}

TEST(SceneIo, RejectsMalformedInput) {
  TempDir dir;
  const Dataset ds = generate_synthetic_dataset(small_synth(), 2, 12);
  save_dataset(dir.file("d.bin"), ds);
  const auto size = fs::file_size(dir.file("d.bin"));
  fs::resize_file(dir.file("d.bin"), size / 2);
  EXPECT_THROW(load_dataset(dir.file("d.bin")), InputError);

  std::istringstream bad_header("not-a-scene-file\n");
  EXPECT_THROW(read_dataset_text(bad_header), InputError);

  Dataset wrong = ds;
  auto& p = wrong.scenes[0].proposals[0];
  p.features = std::make_shared<const Tensor>(Shape{1, 1, 1});
  EXPECT_THROW(validate_dataset(wrong), InputError);
  wrong = ds;
  wrong.scenes[0].proposals[0].prior = RotatedBox(5000, 10, 10, 10, 0);
  EXPECT_THROW(validate_dataset(wrong), InputError);
}

TEST(Synthetic, DeterministicAndWellFormed) {
  const SyntheticConfig c = small_synth();
  const SyntheticWorld world(c);
  const SceneRecord a = generate_synthetic_scene(world, 5);
  const SceneRecord b = generate_synthetic_scene(world, 5);
  Dataset da, db;
  da.scenes = {a};
  db.scenes = {b};
  expect_same_dataset(da, db);
  EXPECT_NE(generate_synthetic_scene(world, 6).gt_objects, a.gt_objects);

  const Dataset ds = generate_synthetic_dataset(c, 30, 3);
  EXPECT_NO_THROW(validate_dataset(ds));
  for (const auto& s : ds.scenes) {
    EXPECT_GE(s.gt_objects.size(), 1u);
    EXPECT_LE(s.gt_objects.size(), c.max_objects);
    std::map<int, std::vector<int>> groups;
    for (const auto& g : s.gt_objects) groups[g.group].push_back(g.label);
    for (const auto& [id, labels] : groups) {
      const bool has_context = labels.front() == 2 || labels.front() == 3;
      EXPECT_TRUE(has_context) << s.scene_id << " group " << id;
    }
    for (const auto& p : s.proposals)
      if (*p.gt_class != static_cast<int>(c.num_classes)) {
        EXPECT_GE(rotated_iou(p.prior, *p.gt_box), 0.5);
      }
  }
  EXPECT_EQ(world.prototype(0), world.prototype(1));
  EXPECT_NE(world.prototype(0), world.prototype(2));

  SyntheticConfig bad = c;
  bad.min_objects = 30;
  bad.max_objects = 10;
  EXPECT_THROW(generate_synthetic_dataset(bad, 1, 0), InputError);
}

TEST(Synthetic, ConfusablePairNeedsContext) {
  // Ambiguous objects: a single-object classifier can do no better than the
  // pair's majority share, while the cluster's context class decides exactly.
  const SyntheticConfig c = small_synth();
  const Dataset ds = generate_synthetic_dataset(c, 200, 21);
  std::size_t n0 = 0, n1 = 0, context_right = 0;
  for (const auto& s : ds.scenes) {
    std::map<int, int> context_of_group;
    for (const auto& g : s.gt_objects)
      if (g.label >= 2) context_of_group[g.group] = g.label;
    for (const auto& g : s.gt_objects) {
      if (g.label > 1) continue;
      (g.label == 0 ? n0 : n1)++;
      const int ctx = context_of_group.count(g.group) ? context_of_group[g.group] : -1;
      const int guess = ctx == 2 ? 0 : ctx == 3 ? 1 : -1;
      context_right += guess == g.label;
    }
  }
  const double total = static_cast<double>(n0 + n1);
  ASSERT_GT(total, 500.0);
  EXPECT_NEAR(std::max(n0, n1) / total, 0.5, 0.05);
  EXPECT_EQ(static_cast<double>(context_right), total);
}

TEST(Ap, HandCases) {
  EXPECT_NEAR(average_precision({true, false, true}, 2), (6.0 + 5.0 * 2.0 / 3.0) / 11.0, 1e-15);
  EXPECT_NEAR(average_precision({true, false, true}, 2, true), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
  EXPECT_EQ(average_precision({true, true}, 2), 1.0);
  EXPECT_EQ(average_precision({false, false}, 2), 0.0);
  EXPECT_EQ(average_precision({}, 3), 0.0);
  EXPECT_THROW(average_precision({true}, 0), InputError);

  const RotatedBox g1(10, 10, 10, 6, 0), g2(60, 10, 10, 6, 0);
  const std::vector<EvalGroundTruth> gts{{0, g1, 0}, {0, g2, 0}};
  // Ranked: TP (g1), FP (nowhere), TP (g2); the duplicate of g1 after them is another FP.
  const std::vector<EvalDetection> dets{{0, g1, 0, 0.9}, {0, RotatedBox(200, 200, 5, 5, 0), 0, 0.8},
                                        {0, g2, 0, 0.7}, {0, g1, 0, 0.6}};
  const MapResult r = mean_average_precision(dets, gts, 2);
  EXPECT_NEAR(r.ap[0], (6.0 + 5.0 * 2.0 / 3.0) / 11.0, 1e-15);
  EXPECT_TRUE(std::isnan(r.ap[1]));
  EXPECT_EQ(r.map, r.ap[0]);
  EXPECT_EQ(r.num_gt[0], 2u);

  EXPECT_EQ(mean_average_precision(std::vector<EvalDetection>{}, gts, 2).map, 0.0);
  const std::vector<EvalDetection> wrong_image{{1, g1, 0, 0.9}, {1, g2, 0, 0.9}};
  EXPECT_EQ(mean_average_precision(wrong_image, gts, 2).map, 0.0);
}

TEST(Ap, MatchesBruteForceOracle) {
  const auto r = checks::ap_suite(500, 31);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Evaluate, PerfectDetectorScoresOne) {
  const Dataset ds = generate_synthetic_dataset(small_synth(), 3, 41);
  std::vector<EvalDetection> dets;
  std::vector<EvalGroundTruth> gts;
  for (std::size_t i = 0; i < ds.scenes.size(); ++i)
    for (const auto& g : ds.scenes[i].gt_objects) {
      gts.push_back({i, g.box, g.label});
      dets.push_back({i, g.box, g.label, 1.0});
    }
  EXPECT_EQ(mean_average_precision(dets, gts, 4).map, 1.0);
}

TEST(Train, LrZeroLeavesParametersUnchanged) {
  PipelineConfig cfg = small_pipeline(small_synth());
  cfg.lr = 0.0;
  const Dataset ds = generate_synthetic_dataset(cfg.synth, 4, 51);
  Model m(cfg.dims);
  m.init(RngStream(1));
  const auto before = all_values(m);
  const TrainResult r = train(m, ds, cfg);
  EXPECT_EQ(all_values(m), before);
  EXPECT_EQ(r.epochs.size(), cfg.epochs);
  EXPECT_GT(r.epochs[0].l_ref, 0.0);
}

TEST(Train, ObjectLossDecreasesOnSeparableScene) {
  SyntheticConfig s = small_synth();
  s.confusable.clear();
  s.appearance_noise = s.style_noise = s.proposal_noise = 0.0;
  PipelineConfig cfg = small_pipeline(s);
  cfg.epochs = 10;
  cfg.batch_size = 1;
  cfg.lr = 0.02;
  cfg.lambda2 = 0.0;
  cfg.train_dropout = false;
  const Dataset ds = generate_synthetic_dataset(s, 1, 61);
  Model m(cfg.dims);
  m.init(RngStream(2));
  const TrainResult r = train(m, ds, cfg);
  for (std::size_t e = 1; e < r.epochs.size(); ++e) EXPECT_LT(r.epochs[e].l_obj, r.epochs[e - 1].l_obj) << e;
}

TEST(Train, SeparableDataReachesFullHeadAccuracy) {
  SyntheticConfig s = small_synth();
  s.confusable.clear();
  s.appearance_noise = s.style_noise = s.proposal_noise = 0.0;
  PipelineConfig cfg = small_pipeline(s);
  cfg.epochs = 40;
  cfg.lr = 0.2;
  cfg.lambda2 = 0.0;
  cfg.train_dropout = false;
  const Dataset train_set = generate_synthetic_dataset(s, 8, 71);
  const Dataset test_set = generate_synthetic_dataset(s, 4, 72);
  Model m(cfg.dims);
  m.init(RngStream(3));
  train(m, train_set, cfg);
  std::size_t right = 0, total = 0;
  for (const auto& scene : test_set.scenes)
    for (const auto& p : scene.proposals) {
      RngStream unused(0);
      const Tensor logits = cls_forward(*p.features, m.head, unused, 0.0, false);
      right += static_cast<int>(argmax(logits.data())) == *p.gt_class;
      ++total;
    }
  EXPECT_EQ(right, total);
}

TEST(Train, ZeroLambda2GivesNoRefinerGradient) {
  PipelineConfig cfg = small_pipeline(small_synth());
  cfg.lambda2 = 0.0;
  cfg.weight_decay = 0.0;
  const Dataset ds = generate_synthetic_dataset(cfg.synth, 3, 81);
  Model m(cfg.dims);
  m.init(RngStream(4));
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    m.zero_grad();
    train_scene(m, ds.scenes[i], cfg, RngStream(i), true);
    for (const auto& p : m.refiner.params())
      for (double g : p.param->grad.data()) ASSERT_EQ(g, 0.0) << p.name;
  }
  std::vector<double> refiner_before;
  for (const auto& p : m.refiner.params())
    refiner_before.insert(refiner_before.end(), p.param->value.data().begin(), p.param->value.data().end());
  train(m, ds, cfg);
  std::vector<double> refiner_after;
  for (const auto& p : m.refiner.params())
    refiner_after.insert(refiner_after.end(), p.param->value.data().begin(), p.param->value.data().end());
  EXPECT_EQ(refiner_before, refiner_after);
}

TEST(Train, EmptyOrMismatchedDataIsAnInputError) {
  PipelineConfig cfg = small_pipeline(small_synth());
  Model m(cfg.dims);
  Dataset empty = generate_synthetic_dataset(cfg.synth, 0, 0);
  EXPECT_THROW(train(m, empty, cfg), InputError);
  PipelineConfig other = cfg;
  other.dims.num_classes = 5;
  Model m5(other.dims);
  EXPECT_THROW(train(m5, generate_synthetic_dataset(cfg.synth, 1, 0), other), InputError);
}

TEST(EndToEnd, DeterministicAcrossThreadCounts) {
  PipelineConfig cfg = small_pipeline(small_synth());
  const Dataset train_set = generate_synthetic_dataset(cfg.synth, 6, 91);
  const Dataset test_set = generate_synthetic_dataset(cfg.synth, 3, 92);
  Model a(cfg.dims), b(cfg.dims);
  a.init(RngStream(5));
  b.init(RngStream(5));
  cfg.threads = 1;
  train(a, train_set, cfg);
  const EvalReport ra = evaluate(a, test_set, cfg);
  cfg.threads = 3;
  train(b, train_set, cfg);
  const EvalReport rb = evaluate(b, test_set, cfg);
  EXPECT_EQ(all_values(a), all_values(b));
  EXPECT_EQ(ra.refined.ap, rb.refined.ap);
  EXPECT_EQ(ra.baseline.ap, rb.baseline.ap);
  EXPECT_EQ(ra.relabelled, rb.relabelled);
  EXPECT_EQ(ra.survivors, rb.survivors);
}

TEST(EndToEnd, BaselineConsistencyAndSourcePreservation) {
  PipelineConfig cfg = small_pipeline(small_synth());
  const Dataset train_set = generate_synthetic_dataset(cfg.synth, 6, 101);
  const Dataset test_set = generate_synthetic_dataset(cfg.synth, 4, 102);
  Model m(cfg.dims);
  m.init(RngStream(6));
  train(m, train_set, cfg);

  std::vector<SceneResult> results;
  const EvalReport rep = evaluate(m, test_set, cfg, &results);
  const auto kept = checks::source_preservation(results);
  EXPECT_TRUE(kept.pass) << kept.detail;
  EXPECT_GT(rep.targets, 0u);
  for (double ap : rep.refined.ap)
    if (!std::isnan(ap)) {
      EXPECT_GE(ap, 0.0);
      EXPECT_LE(ap, 1.0);
    }

  // No refinement loss and no merge: the refined report is the initial detector's.
  PipelineConfig plain = cfg;
  plain.lambda2 = 0.0;
  plain.merge = false;
  Model p(cfg.dims);
  p.init(RngStream(6));
  train(p, train_set, plain);
  const EvalReport base = evaluate(p, test_set, plain);
  EXPECT_EQ(base.refined.ap, base.baseline.ap);
  EXPECT_EQ(base.refined.map, base.baseline.map);
  EXPECT_EQ(base.relabelled, 0u);

  // A merge-free evaluation of the refined model matches its own baseline.
  PipelineConfig no_merge = cfg;
  no_merge.merge = false;
  const EvalReport nm = evaluate(m, test_set, no_merge);
  EXPECT_EQ(nm.refined.map, rep.baseline.map);
}

TEST(Checkpoint, DimsMismatchIsAnInputError) {
  TempDir dir;
  PipelineConfig cfg = small_pipeline(small_synth());
  Model m(cfg.dims);
  m.init(RngStream(7));
  m.save(dir.file("m.ckpt"));
  Model back(cfg.dims);
  back.load(dir.file("m.ckpt"));
  EXPECT_EQ(all_values(back), all_values(m));
  ModelDims other = cfg.dims;
  other.head_hidden = 8;
  Model wrong(other);
  EXPECT_THROW(wrong.load(dir.file("m.ckpt")), InputError);
}
