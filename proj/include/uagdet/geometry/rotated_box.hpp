#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "uagdet/errors.hpp"

namespace uagdet {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Maps an angle into [-pi/2, pi/2). A rectangle is symmetric under a half turn,
// so this is the canonical orientation range.
inline double normalize_angle(double theta) {
  constexpr double pi = std::numbers::pi;
  double t = theta - pi * std::floor((theta + pi / 2.0) / pi);
  // floor() rounding can leave t == pi/2 for inputs just below an odd multiple.
  if (t >= pi / 2.0) t -= pi;
  if (t < -pi / 2.0) t += pi;
  return t;
}

/// Oriented rectangle. `theta` is measured counter-clockwise from +x to the
/// w-edge and is kept in [-pi/2, pi/2).
struct RotatedBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;
  double theta = 0.0;

  RotatedBox() = default;
  RotatedBox(double cx_, double cy_, double w_, double h_, double theta_)
      : cx(cx_), cy(cy_), w(w_), h(h_), theta(normalize_angle(theta_)) {
    require_input(w > 0.0 && h > 0.0 && std::isfinite(w) && std::isfinite(h),
                  "RotatedBox: width and height must be positive and finite");
    require_input(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(theta_),
                  "RotatedBox: non-finite center or angle");
  }

  double area() const { return w * h; }
  Point2 center() const { return {cx, cy}; }

  friend bool operator==(const RotatedBox&, const RotatedBox&) = default;
};

/// Counter-clockwise vertex loop of a convex polygon.
struct ConvexPolygon {
  std::vector<Point2> vertices;
};

inline double cross(Point2 o, Point2 a, Point2 b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Shoelace formula; positive for counter-clockwise loops.
inline double signed_area(const ConvexPolygon& poly) {
  const auto& v = poly.vertices;
  if (v.size() < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point2& p = v[i];
    const Point2& q = v[(i + 1) % v.size()];
    acc += p.x * q.y - q.x * p.y;
  }
  return 0.5 * acc;
}

inline ConvexPolygon corners(const RotatedBox& box) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  const double ux = 0.5 * box.w * c, uy = 0.5 * box.w * s;    // along the w-edge
  const double vx = -0.5 * box.h * s, vy = 0.5 * box.h * c;   // along the h-edge
  return ConvexPolygon{{
      {box.cx - ux - vx, box.cy - uy - vy},
      {box.cx + ux - vx, box.cy + uy - vy},
      {box.cx + ux + vx, box.cy + uy + vy},
      {box.cx - ux + vx, box.cy - uy + vy},
  }};
}

namespace detail {

inline constexpr double kSnapEps = 1e-9;

// Drops consecutive vertices closer than kSnapEps, including the wrap-around pair.
inline void snap_vertices(std::vector<Point2>& pts) {
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (const Point2& p : pts) {
    if (!out.empty() && std::abs(out.back().x - p.x) < kSnapEps &&
        std::abs(out.back().y - p.y) < kSnapEps)
      continue;
    out.push_back(p);
  }
  while (out.size() > 1 && std::abs(out.front().x - out.back().x) < kSnapEps &&
         std::abs(out.front().y - out.back().y) < kSnapEps)
    out.pop_back();
  pts = std::move(out);
}

}  // namespace detail

/// Area of the intersection of two convex counter-clockwise polygons.
/// The subject polygon is clipped against every half-plane of the clip polygon.
inline double intersection_area(const ConvexPolygon& subject, const ConvexPolygon& clip) {
  std::vector<Point2> poly = subject.vertices;
  const auto& cv = clip.vertices;
  if (poly.size() < 3 || cv.size() < 3) return 0.0;

  std::vector<Point2> next;
  for (std::size_t e = 0; e < cv.size() && poly.size() >= 3; ++e) {
    const Point2 a = cv[e];
    const Point2 b = cv[(e + 1) % cv.size()];
    next.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point2 p = poly[i];
      const Point2 q = poly[(i + 1) % poly.size()];
      const double sp = cross(a, b, p);
      const double sq = cross(a, b, q);
      const bool p_in = sp >= 0.0;
      const bool q_in = sq >= 0.0;
      if (p_in) next.push_back(p);
      if (p_in != q_in) {
        const double t = sp / (sp - sq);
        next.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    detail::snap_vertices(next);
    poly.swap(next);
  }
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, signed_area(ConvexPolygon{std::move(poly)}));
}

namespace detail {

// Strict weak order on boxes, used to evaluate the intersection in a fixed
// argument order so rotated_iou(a, b) and rotated_iou(b, a) agree bit-for-bit.
inline bool box_less(const RotatedBox& a, const RotatedBox& b) {
  return std::tie(a.cx, a.cy, a.w, a.h, a.theta) < std::tie(b.cx, b.cy, b.w, b.h, b.theta);
}

}  // namespace detail

inline double rotated_iou(const RotatedBox& a, const RotatedBox& b) {
  if (a == b) return 1.0;
  // Circumscribed-circle rejection.
  const double ra = 0.5 * std::hypot(a.w, a.h);
  const double rb = 0.5 * std::hypot(b.w, b.h);
  const double dx = a.cx - b.cx, dy = a.cy - b.cy;
  if (dx * dx + dy * dy >= (ra + rb) * (ra + rb)) return 0.0;

  const bool swap = detail::box_less(b, a);
  const RotatedBox& first = swap ? b : a;
  const RotatedBox& second = swap ? a : b;
  const double inter = intersection_area(corners(first), corners(second));
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Greedy non-maximum suppression over rotated boxes.
///
/// Candidates with score < score_thr are dropped. Remaining candidates are
/// visited in descending score order (ties: lower index first); a candidate is
/// kept unless a previously kept box of the same label (or any kept box when
/// `labels` is empty) overlaps it with IoU >= iou_thr. Returns kept indices in
/// visiting order.
inline std::vector<std::size_t> nms(std::span<const RotatedBox> boxes,
                                    std::span<const double> scores, double iou_thr,
                                    double score_thr, std::span<const int> labels = {}) {
  require_input(boxes.size() == scores.size(), "nms: boxes and scores differ in length");
  require_input(labels.empty() || labels.size() == boxes.size(),
                "nms: labels and boxes differ in length");
  require_input(iou_thr > 0.0 && iou_thr <= 1.0, "nms: iou_thr must be in (0, 1]");

  std::vector<std::size_t> order;
  order.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (scores[i] >= score_thr) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return scores[l] > scores[r]; });

  std::vector<std::size_t> kept;
  for (std::size_t cand : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (!labels.empty() && labels[k] != labels[cand]) continue;
      if (rotated_iou(boxes[k], boxes[cand]) >= iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

inline double diag_len(double image_w, double image_h) {
  require_input(image_w > 0.0 && image_h > 0.0, "diag_len: image dimensions must be positive");
  return std::hypot(image_w, image_h);
}

}  // namespace uagdet
