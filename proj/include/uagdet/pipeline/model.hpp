#pragma once

#include <string>
#include <vector>

#include "uagdet/detection/head.hpp"
#include "uagdet/model_dims.hpp"
#include "uagdet/numeric/checkpoint.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/numeric/tensor.hpp"
#include "uagdet/refine/gnn.hpp"

namespace uagdet {

/// Detection heads plus the graph refinement branch.
struct Model {
  ModelDims dims;
  HeadParams head;
  RefinerParams refiner;

  Model() = default;
  explicit Model(const ModelDims& d) : dims(d), head(d), refiner(d) {}

  void init(const RngStream& rng) {
    head.init(rng.fork("head"));
    refiner.init(rng.fork("refiner"));
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    append_prefixed(out, "head", head.params());
    append_prefixed(out, "refiner", refiner.params());
    return out;
  }

  std::size_t num_parameters() {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.param->value.size();
    return n;
  }

  void zero_grad() { zero_grads(params()); }

  void save(const std::string& path) { save_checkpoint(path, params()); }
  void load(const std::string& path) { load_checkpoint(path, params()); }
};

/// Flattened gradient of every parameter, in params() order.
inline std::vector<double> flat_grad(Model& m) {
  std::vector<double> out;
  out.reserve(m.num_parameters());
  for (const auto& p : m.params()) {
    const auto g = p.param->grad.data();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

inline void add_flat_grad(Model& m, const std::vector<double>& g) {
  std::size_t off = 0;
  for (const auto& p : m.params()) {
    auto dst = p.param->grad.data();
    require_internal(off + dst.size() <= g.size(), "add_flat_grad: gradient buffer too short");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[off + i];
    off += dst.size();
  }
  require_internal(off == g.size(), "add_flat_grad: gradient buffer too long");
}

/// Copies parameter values (not gradients) from `src`.
inline void copy_values(Model& dst, Model& src) {
  auto d = dst.params();
  auto s = src.params();
  require_internal(d.size() == s.size(), "copy_values: models differ");
  for (std::size_t i = 0; i < d.size(); ++i) d[i].param->value = s[i].param->value;
}

}  // namespace uagdet
