#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uagdet/uagdet.hpp"

namespace {

using namespace uagdet;

PipelineConfig load_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  require_input(static_cast<bool>(os), "cannot open '" + path + "' for writing");
  os << std::setprecision(17);
  return os;
}

Model load_model(const PipelineConfig& cfg, const std::string& checkpoint) {
  Model m(cfg.dims);
  m.load(checkpoint);
  return m;
}

void write_report(std::ostream& os, const EvalReport& r, const Dataset& data) {
  os << std::setprecision(10);
  os << "scenes " << r.scenes << '\n'
     << "survivors " << r.survivors << '\n'
     << "refined_targets " << r.targets << '\n'
     << "flipped_targets " << r.relabelled << '\n'
     << "flipped_fraction " << r.flipped_fraction() << '\n'
     << "target_accuracy_initial " << r.target_acc_initial << '\n'
     << "target_accuracy_refined " << r.target_acc_refined << '\n'
     << "map " << r.refined.map << '\n'
     << "baseline_map " << r.baseline.map << '\n';
  for (std::size_t c = 0; c < r.refined.ap.size(); ++c) {
    const std::string name = c < data.class_names.size() ? data.class_names[c] : std::to_string(c);
    os << "ap " << name << ' ';
    if (std::isnan(r.refined.ap[c]))
      os << "nan nan";
    else
      os << r.refined.ap[c] << ' ' << r.baseline.ap[c];
    os << ' ' << r.refined.num_gt[c] << '\n';
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware graph refinement for rotated object detection"};
  app.require_subcommand(1);

  std::string config_path, data_path, checkpoint, out_path, metrics_path, nodes_path;
  std::uint64_t seed = 0;
  std::size_t scenes = 200, threads = 0, scene_index = 0, n_train = 150, n_test = 50, seeds = 3;
  bool text = false;

  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic scene dataset");
  gen->add_option("--config", config_path, "Config file (synth.* keys)");
  gen->add_option("--seed", seed, "Dataset seed");
  gen->add_option("--scenes", scenes, "Number of scenes");
  gen->add_option("--out", out_path, "Output dataset path")->required();
  gen->add_flag("--text", text, "Write the text variant");

  auto* tr = app.add_subcommand("train", "Train detection heads and the refinement branch");
  tr->add_option("--data", data_path, "Dataset")->required();
  tr->add_option("--config", config_path, "Config file");
  tr->add_option("--checkpoint", checkpoint, "Checkpoint output")->required();
  tr->add_option("--metrics", metrics_path, "Per-epoch loss curve output");
  tr->add_option("--threads", threads, "Worker threads (overrides config)");

  auto* ref = app.add_subcommand("refine", "Run inference and write final detections");
  ref->add_option("--data", data_path, "Dataset")->required();
  ref->add_option("--config", config_path, "Config file");
  ref->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  ref->add_option("--out", out_path, "Detections output")->required();
  ref->add_option("--threads", threads, "Worker threads (overrides config)");

  auto* ev = app.add_subcommand("eval", "Evaluate AP/mAP with and without refinement");
  ev->add_option("--data", data_path, "Dataset")->required();
  ev->add_option("--config", config_path, "Config file");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  ev->add_option("--out", out_path, "Report output (default stdout)");
  ev->add_option("--threads", threads, "Worker threads (overrides config)");

  auto* dg = app.add_subcommand("dump-graph", "Write the object graph of one scene");
  dg->add_option("--data", data_path, "Dataset")->required();
  dg->add_option("--config", config_path, "Config file");
  dg->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  dg->add_option("--scene", scene_index, "Scene index");
  dg->add_option("--out", out_path, "Edge list output")->required();
  dg->add_option("--nodes", nodes_path, "Per-node phi / initial class / refined class output");

  auto* ex = app.add_subcommand("experiment", "Synthetic train/test runs of the full model and its ablations");
  ex->add_option("--config", config_path, "Config file");
  ex->add_option("--seeds", seeds, "Number of seeds (0, 1, ...)");
  ex->add_option("--train-scenes", n_train, "Training scenes per seed");
  ex->add_option("--test-scenes", n_test, "Test scenes per seed");
  ex->add_option("--out", out_path, "Results table output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  PipelineConfig cfg = load_or_default(config_path);
  if (threads > 0) cfg.threads = threads;
  validate(cfg);

  if (*gen) {
    const Dataset ds = generate_synthetic_dataset(cfg.synth, scenes, seed);
    if (text) {
      auto os = open_out(out_path);
      write_dataset_text(os, ds);
    } else {
      save_dataset(out_path, ds);
    }
    std::cout << "wrote " << ds.scenes.size() << " scenes to " << out_path << '\n';
    return 0;
  }

  if (*ex) {
    std::ofstream file;
    if (!out_path.empty()) file = open_out(out_path);
    std::ostream& os = out_path.empty() ? std::cout : file;
    os << "variant seed map baseline_map flipped_fraction seconds\n";
    for (std::uint64_t s = 0; s < seeds; ++s) {
      PipelineConfig c = cfg;
      c.seed = s;
      const SplitData data = make_synthetic_split(c.synth, n_train, n_test, s);
      for (const auto variant : kVariants) {
        const RunResult r = run_variant(c, variant, data);
        os << r.variant << ' ' << s << ' ' << r.report.refined.map << ' ' << r.report.baseline.map << ' '
           << r.report.flipped_fraction() << ' ' << r.seconds << std::endl;
      }
    }
    return 0;
  }

  const Dataset data = load_dataset(data_path);

  if (*tr) {
    Model model(cfg.dims);
    model.init(RngStream(cfg.seed).fork("init"));
    std::ofstream metrics;
    if (!metrics_path.empty()) {
      metrics = open_out(metrics_path);
      metrics << "epoch l_obj l_ref l_total\n";
    }
    train(model, data, cfg, [&](std::size_t epoch, const EpochStats& s) {
      std::cout << "epoch " << epoch << " l_obj " << s.l_obj << " l_ref " << s.l_ref << " l_total " << s.total
                << std::endl;
      if (metrics.is_open()) metrics << epoch << ' ' << s.l_obj << ' ' << s.l_ref << ' ' << s.total << '\n';
    });
    model.save(checkpoint);
    return 0;
  }

  const Model model = load_model(cfg, checkpoint);

  if (*ref) {
    std::vector<SceneResult> results;
    evaluate(model, data, cfg, &results);
    auto os = open_out(out_path);
    os << "scene_id proposal_id label score cx cy w h theta refined\n";
    for (std::size_t i = 0; i < results.size(); ++i)
      for (const auto& d : results[i].final)
        os << data.scenes[i].scene_id << ' ' << d.id << ' ' << d.label << ' ' << d.score << ' ' << d.box.cx << ' '
           << d.box.cy << ' ' << d.box.w << ' ' << d.box.h << ' ' << d.box.theta << ' ' << (d.refined ? 1 : 0)
           << '\n';
    return 0;
  }

  if (*ev) {
    const EvalReport rep = evaluate(model, data, cfg);
    if (out_path.empty()) {
      write_report(std::cout, rep, data);
    } else {
      auto os = open_out(out_path);
      write_report(os, rep, data);
    }
    return 0;
  }

  if (*dg) {
    require_input(scene_index < data.scenes.size(), "scene index " + std::to_string(scene_index) + " out of range");
    const auto& scene = data.scenes[scene_index];
    const SceneResult r = run_scene(model, scene, cfg, RngStream(cfg.seed).fork("eval").fork("scene", scene_index));
    auto os = open_out(out_path);
    write_graph_dump(os, r.sg.graph);
    if (!nodes_path.empty()) {
      auto ns = open_out(nodes_path);
      ns << "id role phi initial_class refined_class\n";
      for (std::size_t i = 0; i < r.sg.nodes.size(); ++i) {
        const auto& p = r.sg.nodes[i];
        const auto& logits = r.refined_logits.at(p.id);
        const auto refined = foreground_label(softmax(std::span<const double>(logits)), cfg.dims.num_classes);
        ns << p.id << ' ' << (i < r.sg.split.sources.size() ? "src" : "dst") << ' ' << p.phi << ' ' << p.label << ' '
           << refined.first << '\n';
      }
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const uagdet::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const uagdet::InternalError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
