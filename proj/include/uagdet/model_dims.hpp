#pragma once

#include <cstddef>

namespace uagdet {

/// Tensor widths of every trainable block. Defaults are the full-size
/// settings (256x7x7 RoI features, 1024-wide heads, 128/16/128/64/16 graph
/// channels); desk-scale runs shrink them through the config file.
struct ModelDims {
  std::size_t num_classes = 15;  // foreground classes; logits have num_classes + 1 entries
  std::size_t feature_channels = 256;
  std::size_t feature_h = 7;
  std::size_t feature_w = 7;
  std::size_t head_hidden = 1024;
  std::size_t down_channels = 128;
  std::size_t embed_channels = 16;
  std::size_t fuse_channels = 128;
  std::size_t gcn1_channels = 64;
  std::size_t gcn2_channels = 16;
  std::size_t refine_hidden = 1024;

  std::size_t positions() const { return feature_h * feature_w; }
  std::size_t feature_size() const { return feature_channels * positions(); }
  std::size_t num_logits() const { return num_classes + 1; }
  std::size_t background() const { return num_classes; }
  std::size_t node_channels() const { return down_channels + embed_channels; }
  std::size_t refined_channels() const { return feature_channels + gcn2_channels; }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

}  // namespace uagdet
