#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>

#include "uagdet/errors.hpp"
#include "uagdet/geometry/rotated_box.hpp"

namespace uagdet {

using BoxDeltas = std::array<double, 5>;

// Largest |log scale| accepted when decoding; keeps exp() finite for wild heads.
inline constexpr double kMaxLogScale = 4.135166556742356;  // log(1000/16)

/// Regression target of `target` relative to `prior`:
/// (dx/w_p, dy/h_p, log(w/w_p), log(h/h_p), wrapped dtheta). Offsets are in the image frame.
inline BoxDeltas encode_box(const RotatedBox& target, const RotatedBox& prior) {
  return {(target.cx - prior.cx) / prior.w, (target.cy - prior.cy) / prior.h,
          std::log(target.w / prior.w), std::log(target.h / prior.h),
          normalize_angle(target.theta - prior.theta)};
}

inline RotatedBox decode_box(std::span<const double> deltas, const RotatedBox& prior) {
  require_input(deltas.size() == 5, "decode_box: expected 5 offsets");
  const double lw = std::clamp(deltas[2], -kMaxLogScale, kMaxLogScale);
  const double lh = std::clamp(deltas[3], -kMaxLogScale, kMaxLogScale);
  return RotatedBox(prior.cx + deltas[0] * prior.w, prior.cy + deltas[1] * prior.h,
                    prior.w * std::exp(lw), prior.h * std::exp(lh), prior.theta + deltas[4]);
}

}  // namespace uagdet
