#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uagdet/errors.hpp"
#include "uagdet/graph/object_graph.hpp"
#include "uagdet/model_dims.hpp"
#include "uagdet/uncertainty/mc_dropout.hpp"

namespace uagdet {

/// Synthetic aerial-layout scene generator settings (keys prefixed "synth.").
struct SyntheticConfig {
  std::size_t num_classes = 8;
  std::size_t feature_channels = 16;
  std::size_t feature_h = 3;
  std::size_t feature_w = 3;
  std::size_t appearance_channels = 4;  // leading channels carry the class prototype
  bool signed_appearance = false;       // each object shows +prototype or -prototype at random
  // member class -> context class; a member always appears with its context class.
  std::vector<std::pair<int, int>> context_of = {{0, 4}, {1, 5}, {2, 6}, {3, 7}};
  // Classes in a pair share one prototype and are indistinguishable on their own.
  std::vector<std::pair<int, int>> confusable = {{0, 1}, {2, 3}};
  double image_w = 1024.0;
  double image_h = 1024.0;
  std::size_t min_objects = 30;
  std::size_t max_objects = 80;
  std::size_t min_cluster = 3;
  std::size_t max_cluster = 7;
  double context_fraction = 0.6;   // share of cluster members drawn from the context class
  double dispersed_fraction = 0.5; // clusters spread wider than thr_spa, tied by a shared style
  double compact_radius = 22.0;
  double compact_spacing = 16.0;
  double dispersed_extent = 320.0;
  double separation = 60.0;        // min distance between objects of different clusters
  double prototype_scale = 1.0;
  double appearance_noise = 0.3;
  double style_scale = 1.0;
  double style_noise = 0.1;
  double proposal_noise = 0.05;
  std::size_t background_proposals = 8;
  double duplicate_prob = 0.3;
  std::uint64_t prototype_seed = 7;

  std::size_t num_logits() const { return num_classes + 1; }
};

struct PipelineConfig {
  ModelDims dims;

  // Lightweight MC dropout.
  std::size_t mc_passes = 50;
  double dropout_ratio = 0.2;
  RelaxMode relax_mode = RelaxMode::Score;

  // Graph.
  GraphSettings graph;
  std::size_t cap = 100;

  // Refinement and losses.
  bool use_class_embedding = true;
  bool uncertainty_loss = true;
  bool merge = true;
  double tau = 0.1;
  double lambda1 = 1.0;
  double lambda2 = 1.0;

  // NMS at the usual thresholds.
  NmsSettings nms;

  // Training.
  std::size_t epochs = 12;
  double lr = 0.01;
  double weight_decay = 1e-4;
  double momentum = 0.0;
  std::size_t batch_size = 4;
  std::size_t warmup_epochs = 0;  // epochs trained on L_obj only before L_ref joins
  bool train_dropout = true;
  bool mean_loss = false;  // divide per-scene sums by their term counts before stepping

  // Evaluation.
  double ap_iou_thr = 0.5;
  bool ap_all_points = false;

  std::uint64_t seed = 0;
  std::size_t threads = 1;

  SyntheticConfig synth;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw InputError("config: " + key + " expects a number, got '" + v + "'");
  }
  if (used != v.size()) throw InputError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw InputError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  if (used != v.size()) throw InputError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InputError("config: " + key + " expects a boolean, got '" + v + "'");
}

// "0:4,1:5"
inline std::vector<std::pair<int, int>> parse_pairs(const std::string& key, const std::string& v) {
  std::vector<std::pair<int, int>> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InputError("config: " + key + " expects a:b pairs, got '" + item + "'");
    out.emplace_back(static_cast<int>(parse_uint(key, trim(item.substr(0, colon)))),
                     static_cast<int>(parse_uint(key, trim(item.substr(colon + 1)))));
  }
  return out;
}

inline std::string format_pairs(const std::vector<std::pair<int, int>>& pairs) {
  std::string out;
  for (const auto& [a, b] : pairs) out += (out.empty() ? "" : ",") + std::to_string(a) + ":" + std::to_string(b);
  return out.empty() ? "none" : out;
}

struct ConfigField {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::map<std::string, ConfigField> config_fields(PipelineConfig& c) {
  std::map<std::string, ConfigField> f;
  auto size_field = [&f](const std::string& k, std::size_t& ref) {
    f[k] = {[&ref, k](const std::string& v) { ref = static_cast<std::size_t>(parse_uint(k, v)); },
            [&ref] { return std::to_string(ref); }};
  };
  auto u64_field = [&f](const std::string& k, std::uint64_t& ref) {
    f[k] = {[&ref, k](const std::string& v) { ref = parse_uint(k, v); }, [&ref] { return std::to_string(ref); }};
  };
  auto dbl_field = [&f](const std::string& k, double& ref) {
    f[k] = {[&ref, k](const std::string& v) { ref = parse_double(k, v); }, [&ref] { return fmt_double(ref); }};
  };
  auto bool_field = [&f](const std::string& k, bool& ref) {
    f[k] = {[&ref, k](const std::string& v) { ref = parse_bool(k, v); },
            [&ref] { return std::string(ref ? "true" : "false"); }};
  };
  auto pairs_field = [&f](const std::string& k, std::vector<std::pair<int, int>>& ref) {
    f[k] = {[&ref, k](const std::string& v) { ref = parse_pairs(k, v); }, [&ref] { return format_pairs(ref); }};
  };

  size_field("num_classes", c.dims.num_classes);
  size_field("feature_channels", c.dims.feature_channels);
  size_field("feature_h", c.dims.feature_h);
  size_field("feature_w", c.dims.feature_w);
  size_field("head_hidden", c.dims.head_hidden);
  size_field("down_channels", c.dims.down_channels);
  size_field("embed_channels", c.dims.embed_channels);
  size_field("fuse_channels", c.dims.fuse_channels);
  size_field("gcn1_channels", c.dims.gcn1_channels);
  size_field("gcn2_channels", c.dims.gcn2_channels);
  size_field("refine_hidden", c.dims.refine_hidden);

  size_field("mc_passes", c.mc_passes);
  dbl_field("dropout_ratio", c.dropout_ratio);
  f["relax_mode"] = {[&c](const std::string& v) {
                       if (v == "score") c.relax_mode = RelaxMode::Score;
                       else if (v == "iou") c.relax_mode = RelaxMode::Iou;
                       else throw InputError("config: relax_mode must be score or iou");
                     },
                     [&c] { return std::string(c.relax_mode == RelaxMode::Score ? "score" : "iou"); }};

  dbl_field("thr_spa", c.graph.thr_spa);
  dbl_field("thr_sem", c.graph.thr_sem);
  bool_field("spatial_edges", c.graph.spatial_edges);
  bool_field("semantic_edges", c.graph.semantic_edges);
  bool_field("standardize_semantic", c.graph.standardize);
  f["edge_weight"] = {[&c](const std::string& v) {
                        if (v == "inverse_product") c.graph.weight_mode = EdgeWeightMode::InverseProduct;
                        else if (v == "diag_over_dist") c.graph.weight_mode = EdgeWeightMode::DiagOverDist;
                        else throw InputError("config: edge_weight must be inverse_product or diag_over_dist");
                      },
                      [&c] {
                        return std::string(c.graph.weight_mode == EdgeWeightMode::InverseProduct ? "inverse_product"
                                                                                                 : "diag_over_dist");
                      }};
  size_field("cap", c.cap);

  bool_field("use_class_embedding", c.use_class_embedding);
  bool_field("uncertainty_loss", c.uncertainty_loss);
  bool_field("merge", c.merge);
  dbl_field("tau", c.tau);
  dbl_field("lambda1", c.lambda1);
  dbl_field("lambda2", c.lambda2);

  dbl_field("nms_score_thr", c.nms.score_thr);
  dbl_field("nms_iou_thr", c.nms.iou_thr);
  bool_field("nms_per_class", c.nms.per_class);

  size_field("epochs", c.epochs);
  dbl_field("lr", c.lr);
  dbl_field("weight_decay", c.weight_decay);
  dbl_field("momentum", c.momentum);
  size_field("batch_size", c.batch_size);
  size_field("warmup_epochs", c.warmup_epochs);
  bool_field("train_dropout", c.train_dropout);
  bool_field("mean_loss", c.mean_loss);

  dbl_field("ap_iou_thr", c.ap_iou_thr);
  bool_field("ap_all_points", c.ap_all_points);

  u64_field("seed", c.seed);
  size_field("threads", c.threads);

  SyntheticConfig& s = c.synth;
  size_field("synth.num_classes", s.num_classes);
  size_field("synth.feature_channels", s.feature_channels);
  size_field("synth.feature_h", s.feature_h);
  size_field("synth.feature_w", s.feature_w);
  size_field("synth.appearance_channels", s.appearance_channels);
  pairs_field("synth.context_of", s.context_of);
  pairs_field("synth.confusable", s.confusable);
  dbl_field("synth.image_w", s.image_w);
  dbl_field("synth.image_h", s.image_h);
  size_field("synth.min_objects", s.min_objects);
  size_field("synth.max_objects", s.max_objects);
  size_field("synth.min_cluster", s.min_cluster);
  size_field("synth.max_cluster", s.max_cluster);
  dbl_field("synth.context_fraction", s.context_fraction);
  dbl_field("synth.dispersed_fraction", s.dispersed_fraction);
  dbl_field("synth.compact_radius", s.compact_radius);
  dbl_field("synth.compact_spacing", s.compact_spacing);
  dbl_field("synth.dispersed_extent", s.dispersed_extent);
  dbl_field("synth.separation", s.separation);
  dbl_field("synth.prototype_scale", s.prototype_scale);
  dbl_field("synth.appearance_noise", s.appearance_noise);
  bool_field("synth.signed_appearance", s.signed_appearance);
  dbl_field("synth.style_scale", s.style_scale);
  dbl_field("synth.style_noise", s.style_noise);
  dbl_field("synth.proposal_noise", s.proposal_noise);
  size_field("synth.background_proposals", s.background_proposals);
  dbl_field("synth.duplicate_prob", s.duplicate_prob);
  u64_field("synth.prototype_seed", s.prototype_seed);
  return f;
}

}  // namespace detail

inline void validate(const PipelineConfig& c) {
  require_input(c.mc_passes >= 1, "config: mc_passes must be >= 1");
  require_input(c.dropout_ratio >= 0.0 && c.dropout_ratio < 1.0, "config: dropout_ratio must be in [0, 1)");
  require_input(c.tau > 0.0, "config: tau must be positive");
  require_input(c.nms.iou_thr > 0.0 && c.nms.iou_thr <= 1.0, "config: nms_iou_thr must be in (0, 1]");
  require_input(c.batch_size >= 1, "config: batch_size must be >= 1");
  require_input(c.threads >= 1, "config: threads must be >= 1");
  require_input(c.cap >= 1, "config: cap must be >= 1");
  require_input(c.dims.num_classes >= 1, "config: num_classes must be >= 1");
  require_input(c.ap_iou_thr > 0.0 && c.ap_iou_thr <= 1.0, "config: ap_iou_thr must be in (0, 1]");
}

/// Applies "key = value" lines ('#' starts a comment) on top of `base`.
inline PipelineConfig parse_config(std::istream& is, PipelineConfig base = {}) {
  auto fields = detail::config_fields(base);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = fields.find(key);
    if (it == fields.end()) throw InputError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second.set(value);
  }
  validate(base);
  return base;
}

inline PipelineConfig parse_config_string(const std::string& text, PipelineConfig base = {}) {
  std::istringstream is(text);
  return parse_config(is, std::move(base));
}

inline PipelineConfig load_config(const std::string& path, PipelineConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config file " + path);
  return parse_config(is, std::move(base));
}

inline std::string config_to_string(PipelineConfig c) {
  std::ostringstream os;
  for (const auto& [key, field] : detail::config_fields(c)) os << key << " = " << field.get() << '\n';
  return os.str();
}

}  // namespace uagdet
