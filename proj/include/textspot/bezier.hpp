#pragma once
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "textspot/tensor.hpp"

// Cubic Bezier machinery: Bernstein evaluation, uniform-in-t sampling, the
// anchor+offset control-point transform, and band polygon assembly. All
// coordinates are normalized image coordinates in [0,1].

namespace textspot {

struct Vec2 {
  double x = 0, y = 0;
  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
};

using Polyline = std::vector<Vec2>;

struct BezierCurve {
  std::array<Vec2, 4> ctrl;  // reading order: ctrl[0] at text start
};

inline std::array<double, 4> bernstein_weights(double t) {
  double u = 1.0 - t;
  return {u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t};
}

inline Vec2 bernstein_eval(const BezierCurve& c, double t) {
  if (t < 0.0 || t > 1.0)
    throw std::invalid_argument("bernstein_eval: t=" + std::to_string(t) + " outside [0,1]");
  auto w = bernstein_weights(t);
  Vec2 p{0, 0};
  for (int j = 0; j < 4; ++j) p = p + c.ctrl[size_t(j)] * w[size_t(j)];
  return p;
}

// Curve tangent dB/dt; used by the data generator for band normals.
inline Vec2 bernstein_tangent(const BezierCurve& c, double t) {
  double u = 1.0 - t;
  std::array<double, 4> w = {-3.0 * u * u, 3.0 * (1.0 - 4.0 * t + 3.0 * t * t),
                             3.0 * t * (2.0 - 3.0 * t), 3.0 * t * t};
  Vec2 p{0, 0};
  for (int j = 0; j < 4; ++j) p = p + c.ctrl[size_t(j)] * w[size_t(j)];
  return p;
}

// n points at t = k/(n-1), uniform in the Bezier parameter (not arc length).
// Ground truth and proposal sampling must share this convention.
inline Polyline sample_uniform(const BezierCurve& c, int n) {
  if (n < 2) throw std::invalid_argument("sample_uniform: n=" + std::to_string(n) + " < 2");
  Polyline pts(size_t(n), Vec2{});
  for (int k = 0; k < n; ++k) pts[size_t(k)] = bernstein_eval(c, double(k) / double(n - 1));
  return pts;
}

inline BezierCurve center_from_sides(const BezierCurve& top, const BezierCurve& bottom) {
  BezierCurve c;
  for (int j = 0; j < 4; ++j) c.ctrl[size_t(j)] = (top.ctrl[size_t(j)] + bottom.ctrl[size_t(j)]) * 0.5;
  return c;
}

// Control points from a pixel anchor and eight predicted offsets, laid out
// (dx0, dy0, ..., dx3, dy3):  bp_j = sigma(offset + inv_sigmoid(anchor)).
inline BezierCurve apply_offset_transform(Vec2 anchor, const std::array<double, 8>& offsets) {
  const double lx = inv_sigmoid_scalar(anchor.x);
  const double ly = inv_sigmoid_scalar(anchor.y);
  BezierCurve c;
  for (int j = 0; j < 4; ++j) {
    c.ctrl[size_t(j)].x = sigmoid_scalar(offsets[size_t(2 * j)] + lx);
    c.ctrl[size_t(j)].y = sigmoid_scalar(offsets[size_t(2 * j + 1)] + ly);
  }
  return c;
}

// Tensor variant used by the encoder: offsets [P,8] with gradients, anchors
// [P,2] plain values. Returns control points [P,4,2].
inline Tensor apply_offset_transform_t(const Tensor& offsets, const std::vector<Vec2>& anchors) {
  const Shape& s = offsets.shape();
  if (s.size() != 2 || s[1] != 8)
    op_fail("apply_offset_transform", "offsets must be [P,8], got " + shape_str(s));
  if (size_t(s[0]) != anchors.size())
    op_fail("apply_offset_transform", "anchor count mismatch");
  std::vector<double> logits(anchors.size() * 8);
  for (size_t i = 0; i < anchors.size(); ++i) {
    double lx = inv_sigmoid_scalar(anchors[i].x);
    double ly = inv_sigmoid_scalar(anchors[i].y);
    for (int j = 0; j < 4; ++j) {
      logits[i * 8 + size_t(2 * j)] = lx;
      logits[i * 8 + size_t(2 * j + 1)] = ly;
    }
  }
  Tensor anchor_logits = Tensor::from({s[0], 8}, std::move(logits));
  return reshape(sigmoid(add(offsets, anchor_logits)), {s[0], 4, 2});
}

// The fixed [n,4] Bernstein weight matrix mapping control points to samples;
// sampling a proposal curve is then a single matmul.
inline Tensor bernstein_matrix(int n) {
  if (n < 2) op_fail("bernstein_matrix", "n < 2");
  std::vector<double> w(size_t(n) * 4);
  for (int k = 0; k < n; ++k) {
    auto row = bernstein_weights(double(k) / double(n - 1));
    for (int j = 0; j < 4; ++j) w[size_t(k) * 4 + size_t(j)] = row[size_t(j)];
  }
  return Tensor::from({n, 4}, std::move(w));
}

// Closed ring in reading order: top side start->end, bottom side end->start.
inline Polyline rebuild_polygon(const Polyline& center, const Polyline& top_offsets,
                                const Polyline& bottom_offsets) {
  if (center.size() != top_offsets.size() || center.size() != bottom_offsets.size())
    throw std::invalid_argument("rebuild_polygon: length mismatch");
  Polyline poly;
  poly.reserve(center.size() * 2);
  for (size_t i = 0; i < center.size(); ++i) poly.push_back(center[i] + top_offsets[i]);
  for (size_t i = center.size(); i-- > 0;) poly.push_back(center[i] + bottom_offsets[i]);
  return poly;
}

}  // namespace textspot
