#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "uagdet/geometry/rotated_box.hpp"
#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

/// Region proposal as delivered by the upstream detector: prior box, pooled
/// feature map, and (for training data) ground truth.
struct ProposalRecord {
  std::size_t id = 0;
  RotatedBox prior;
  std::shared_ptr<const Tensor> features;  // [C x H x W]
  std::optional<int> gt_class;             // background = num_classes
  std::optional<RotatedBox> gt_box;
};

/// A proposal after the initial (MC) detection pass.
struct Proposal {
  std::size_t id = 0;
  std::shared_ptr<const Tensor> features;
  std::vector<double> probs;  // over num_classes + 1 (background last)
  RotatedBox box;
  int label = 0;  // argmax over foreground classes
  double score = 0.0;
  double phi = 0.0;
  std::optional<int> gt_class;
  std::optional<RotatedBox> gt_box;
};

/// One output detection. `refined` marks records whose class came from the graph head.
struct Detection {
  std::size_t id = 0;
  RotatedBox box;
  int label = 0;
  double score = 0.0;
  bool refined = false;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Foreground argmax (ties -> lower index) and its probability.
inline std::pair<int, double> foreground_label(std::span<const double> probs,
                                               std::size_t num_classes) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < num_classes; ++k)
    if (probs[k] > probs[best]) best = k;
  return {static_cast<int>(best), probs[best]};
}

/// Argmax over all entries, ties -> lower index.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace uagdet
