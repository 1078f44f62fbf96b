#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "uagdet/detection/proposal.hpp"
#include "uagdet/errors.hpp"
#include "uagdet/geometry/rotated_box.hpp"
#include "uagdet/numeric/checkpoint.hpp"
#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

struct GroundTruth {
  RotatedBox box;
  int label = 0;
  int group = -1;  // optional layout group (synthetic cluster id); -1 if unknown

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct SceneRecord {
  std::string scene_id;
  double image_w = 0.0;
  double image_h = 0.0;
  std::vector<ProposalRecord> proposals;
  std::vector<GroundTruth> gt_objects;
};

/// A set of scenes sharing class names and feature shape.
struct Dataset {
  std::vector<std::string> class_names;  // foreground classes
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<SceneRecord> scenes;

  std::size_t num_classes() const { return class_names.size(); }
  Shape feature_shape() const { return {channels, height, width}; }
};

/// Checks the dataset-level invariants: proposal centers inside the image,
/// feature tensors of the declared shape, labels in range.
inline void validate_dataset(const Dataset& ds) {
  const Shape shape = ds.feature_shape();
  const int background = static_cast<int>(ds.num_classes());
  for (const auto& s : ds.scenes) {
    require_input(s.image_w > 0.0 && s.image_h > 0.0, "scene " + s.scene_id + ": bad image size");
    for (const auto& p : s.proposals) {
      const std::string where = "scene " + s.scene_id + " proposal " + std::to_string(p.id);
      require_input(p.features != nullptr && p.features->shape() == shape,
                    where + ": feature shape differs from declared " + shape_str(shape));
      require_input(p.prior.cx >= 0.0 && p.prior.cx <= s.image_w && p.prior.cy >= 0.0 &&
                        p.prior.cy <= s.image_h,
                    where + ": center outside the image");
      if (p.gt_class) require_input(*p.gt_class >= 0 && *p.gt_class <= background, where + ": class out of range");
    }
    for (const auto& g : s.gt_objects)
      require_input(g.label >= 0 && g.label < background, "scene " + s.scene_id + ": ground-truth class out of range");
  }
}

// ---------------------------------------------------------------------------
// Binary format
//
//   magic "UAGSCN\0\0" | u32 version | u32 class count | class names |
//   u32 C | u32 H | u32 W | u64 scene count | scenes...
//   scene: string id | f64 image_w | f64 image_h |
//          u32 n_gt | { f64 cx cy w h theta | i32 label | i32 group } |
//          u32 n_prop | { u64 id | f64 prior[5] | i32 gt_class (-1 none) |
//                         u8 has_gt_box | f64 gt_box[5] | f64 features[C*H*W] }
//
// Sidecar "<path>.idx" lists each scene's byte offset for random access.

inline constexpr char kSceneMagic[8] = {'U', 'A', 'G', 'S', 'C', 'N', '\0', '\0'};
inline constexpr std::uint32_t kSceneVersion = 1;

namespace detail {

inline void write_box(std::ostream& os, const RotatedBox& b) {
  for (double v : {b.cx, b.cy, b.w, b.h, b.theta}) le::write<double>(os, v);
}

inline RotatedBox read_box(std::istream& is) {
  double v[5];
  for (double& x : v) x = le::read<double>(is);
  return RotatedBox(v[0], v[1], v[2], v[3], v[4]);
}

inline void write_scene_binary(std::ostream& os, const SceneRecord& s) {
  le::write_string(os, s.scene_id);
  le::write<double>(os, s.image_w);
  le::write<double>(os, s.image_h);
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(s.gt_objects.size()));
  for (const auto& g : s.gt_objects) {
    write_box(os, g.box);
    le::write<std::int32_t>(os, g.label);
    le::write<std::int32_t>(os, g.group);
  }
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(s.proposals.size()));
  for (const auto& p : s.proposals) {
    le::write<std::uint64_t>(os, p.id);
    write_box(os, p.prior);
    le::write<std::int32_t>(os, p.gt_class.value_or(-1));
    le::write<std::uint8_t>(os, p.gt_box ? 1 : 0);
    write_box(os, p.gt_box.value_or(RotatedBox{}));
    le::write_doubles(os, p.features->data());
  }
}

inline SceneRecord read_scene_binary(std::istream& is, const Shape& shape) {
  SceneRecord s;
  s.scene_id = le::read_string(is);
  s.image_w = le::read<double>(is);
  s.image_h = le::read<double>(is);
  const auto n_gt = le::read<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_gt; ++i) {
    GroundTruth g;
    g.box = read_box(is);
    g.label = le::read<std::int32_t>(is);
    g.group = le::read<std::int32_t>(is);
    s.gt_objects.push_back(g);
  }
  const auto n_prop = le::read<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_prop; ++i) {
    ProposalRecord p;
    p.id = static_cast<std::size_t>(le::read<std::uint64_t>(is));
    p.prior = read_box(is);
    const auto gt_class = le::read<std::int32_t>(is);
    if (gt_class >= 0) p.gt_class = gt_class;
    const auto has_box = le::read<std::uint8_t>(is);
    const RotatedBox gt_box = read_box(is);
    if (has_box) p.gt_box = gt_box;
    Tensor f(shape);
    le::read_doubles(is, f.data());
    p.features = std::make_shared<const Tensor>(std::move(f));
    s.proposals.push_back(std::move(p));
  }
  return s;
}

struct BinaryHeader {
  std::vector<std::string> class_names;
  std::size_t channels = 0, height = 0, width = 0;
  std::uint64_t scene_count = 0;
};

inline BinaryHeader read_binary_header(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kSceneMagic, sizeof(magic)) != 0) throw InputError("scene file: bad magic");
  const auto version = le::read<std::uint32_t>(is);
  if (version != kSceneVersion) throw InputError("scene file: unsupported version " + std::to_string(version));
  BinaryHeader h;
  const auto n_classes = le::read<std::uint32_t>(is);
  if (n_classes > 100000) throw InputError("scene file: implausible class count");
  for (std::uint32_t i = 0; i < n_classes; ++i) h.class_names.push_back(le::read_string(is));
  h.channels = le::read<std::uint32_t>(is);
  h.height = le::read<std::uint32_t>(is);
  h.width = le::read<std::uint32_t>(is);
  h.scene_count = le::read<std::uint64_t>(is);
  return h;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline std::string index_path(const std::string& path) { return path + ".idx"; }

/// Writes the binary container plus its sidecar index.
inline void write_dataset_binary(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path + " for writing");
  os.write(kSceneMagic, sizeof(kSceneMagic));
  le::write<std::uint32_t>(os, kSceneVersion);
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(ds.class_names.size()));
  for (const auto& n : ds.class_names) le::write_string(os, n);
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(ds.channels));
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(ds.height));
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(ds.width));
  le::write<std::uint64_t>(os, ds.scenes.size());
  std::vector<std::uint64_t> offsets;
  for (const auto& s : ds.scenes) {
    offsets.push_back(static_cast<std::uint64_t>(os.tellp()));
    detail::write_scene_binary(os, s);
  }
  if (!os) throw InputError("write failed: " + path);

  std::ofstream idx(index_path(path));
  if (!idx) throw InputError("cannot open " + index_path(path) + " for writing");
  idx << "uagdet-index 1\n" << offsets.size() << '\n';
  for (std::size_t i = 0; i < offsets.size(); ++i) idx << offsets[i] << ' ' << ds.scenes[i].scene_id << '\n';
}

// ---------------------------------------------------------------------------
// Text format (small fixtures)
//
//   uagdet-scenes 1
//   classes <name>...
//   feature_shape C H W
//   scene <id> <image_w> <image_h>
//   gt <cx> <cy> <w> <h> <theta> <label> <group>
//   proposal <id> <cx> <cy> <w> <h> <theta> <gt_class|-> [<gt cx cy w h theta>|-]
//   features <C*H*W values>
//   end

inline void write_dataset_text(std::ostream& os, const Dataset& ds) {
  using detail::fmt;
  os << "uagdet-scenes 1\nclasses";
  for (const auto& n : ds.class_names) os << ' ' << n;
  os << "\nfeature_shape " << ds.channels << ' ' << ds.height << ' ' << ds.width << '\n';
  auto box = [&](const RotatedBox& b) {
    os << fmt(b.cx) << ' ' << fmt(b.cy) << ' ' << fmt(b.w) << ' ' << fmt(b.h) << ' ' << fmt(b.theta);
  };
  for (const auto& s : ds.scenes) {
    os << "scene " << s.scene_id << ' ' << fmt(s.image_w) << ' ' << fmt(s.image_h) << '\n';
    for (const auto& g : s.gt_objects) {
      os << "gt ";
      box(g.box);
      os << ' ' << g.label << ' ' << g.group << '\n';
    }
    for (const auto& p : s.proposals) {
      os << "proposal " << p.id << ' ';
      box(p.prior);
      os << ' ';
      if (p.gt_class) os << *p.gt_class; else os << '-';
      os << ' ';
      if (p.gt_box) box(*p.gt_box); else os << '-';
      os << "\nfeatures";
      for (double v : p.features->data()) os << ' ' << fmt(v);
      os << '\n';
    }
    os << "end\n";
  }
}

inline Dataset read_dataset_text(std::istream& is) {
  Dataset ds;
  std::string line, tag;
  auto fail = [](const std::string& msg) { throw InputError("text scene file: " + msg); };
  if (!std::getline(is, line) || line.rfind("uagdet-scenes 1", 0) != 0) fail("bad header");
  SceneRecord* scene = nullptr;
  ProposalRecord* pending = nullptr;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    if (!(ls >> tag)) continue;
    auto read_box = [&]() {
      double v[5];
      for (double& x : v)
        if (!(ls >> x)) fail("malformed box in line: " + line);
      return RotatedBox(v[0], v[1], v[2], v[3], v[4]);
    };
    if (tag == "classes") {
      std::string n;
      while (ls >> n) ds.class_names.push_back(n);
    } else if (tag == "feature_shape") {
      if (!(ls >> ds.channels >> ds.height >> ds.width)) fail("malformed feature_shape");
    } else if (tag == "scene") {
      ds.scenes.emplace_back();
      scene = &ds.scenes.back();
      if (!(ls >> scene->scene_id >> scene->image_w >> scene->image_h)) fail("malformed scene line");
    } else if (tag == "gt") {
      if (!scene) fail("gt outside scene");
      GroundTruth g;
      g.box = read_box();
      if (!(ls >> g.label >> g.group)) fail("malformed gt line");
      scene->gt_objects.push_back(g);
    } else if (tag == "proposal") {
      if (!scene) fail("proposal outside scene");
      ProposalRecord p;
      if (!(ls >> p.id)) fail("malformed proposal id");
      p.prior = read_box();
      std::string cls;
      if (!(ls >> cls)) fail("missing gt class");
      if (cls != "-") p.gt_class = std::stoi(cls);
      std::string next;
      if (!(ls >> next)) fail("missing gt box");
      if (next != "-") {
        ls.seekg(-static_cast<std::streamoff>(next.size()), std::ios::cur);
        p.gt_box = read_box();
      }
      scene->proposals.push_back(p);
      pending = &scene->proposals.back();
    } else if (tag == "features") {
      if (!pending) fail("features without proposal");
      Tensor f(ds.feature_shape());
      for (double& v : f.data())
        if (!(ls >> v)) fail("too few feature values for proposal " + std::to_string(pending->id));
      double extra;
      if (ls >> extra) fail("too many feature values for proposal " + std::to_string(pending->id));
      pending->features = std::make_shared<const Tensor>(std::move(f));
      pending = nullptr;
    } else if (tag == "end") {
      scene = nullptr;
      pending = nullptr;
    } else {
      fail("unknown record '" + tag + "'");
    }
  }
  for (const auto& s : ds.scenes)
    for (const auto& p : s.proposals)
      if (!p.features) throw InputError("text scene file: proposal " + std::to_string(p.id) + " has no features");
  return ds;
}

inline Dataset read_dataset_binary(std::istream& is) {
  const auto h = detail::read_binary_header(is);
  Dataset ds;
  ds.class_names = h.class_names;
  ds.channels = h.channels;
  ds.height = h.height;
  ds.width = h.width;
  for (std::uint64_t i = 0; i < h.scene_count; ++i) ds.scenes.push_back(detail::read_scene_binary(is, ds.feature_shape()));
  return ds;
}

/// Reads either format, chosen by the leading magic bytes, and validates it.
inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open dataset " + path);
  char head[8] = {};
  is.read(head, sizeof(head));
  is.clear();
  is.seekg(0);
  Dataset ds = std::memcmp(head, kSceneMagic, sizeof(head)) == 0 ? read_dataset_binary(is) : read_dataset_text(is);
  validate_dataset(ds);
  return ds;
}

/// Writes the text variant when the path ends in ".txt", else binary + index.
inline void save_dataset(const std::string& path, const Dataset& ds) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".txt") == 0) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open " + path + " for writing");
    write_dataset_text(os, ds);
  } else {
    write_dataset_binary(path, ds);
  }
}

/// Random access to one scene of a binary dataset through the sidecar index.
inline SceneRecord read_scene_at(const std::string& path, std::size_t index, Dataset* header_out = nullptr) {
  std::ifstream idx(index_path(path));
  if (!idx) throw InputError("missing sidecar index " + index_path(path));
  std::string tag;
  int version = 0;
  std::size_t count = 0;
  if (!(idx >> tag >> version >> count) || tag != "uagdet-index" || version != 1)
    throw InputError("malformed index " + index_path(path));
  if (index >= count) throw InputError("scene index " + std::to_string(index) + " out of range");
  std::uint64_t offset = 0;
  std::string id;
  for (std::size_t i = 0; i <= index; ++i)
    if (!(idx >> offset >> id)) throw InputError("truncated index " + index_path(path));

  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open dataset " + path);
  const auto h = detail::read_binary_header(is);
  is.seekg(static_cast<std::streamoff>(offset));
  Dataset ds;
  ds.class_names = h.class_names;
  ds.channels = h.channels;
  ds.height = h.height;
  ds.width = h.width;
  ds.scenes.push_back(detail::read_scene_binary(is, ds.feature_shape()));
  validate_dataset(ds);
  if (ds.scenes[0].scene_id != id) throw InputError("index entry does not match scene at offset");
  SceneRecord out = std::move(ds.scenes[0]);
  if (header_out) {
    ds.scenes.clear();
    *header_out = std::move(ds);
  }
  return out;
}

}  // namespace uagdet
