#pragma once
#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "textspot/decode.hpp"
#include "textspot/types.hpp"

// Evaluation: polygon IoU (exact clipping with a rasterized even-odd
// fallback for self-intersecting rings), greedy IoU matching, detection /
// end-to-end / detection+script H-mean, 1-NED, and a center-line protocol
// for models trained without boundary supervision.

namespace textspot {

// ---------------------------------------------------------------------------
// polygon machinery
// ---------------------------------------------------------------------------
inline double polygon_signed_area(const Polyline& p) {
  double a = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % p.size()];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * a;
}

inline double polygon_area(const Polyline& p) { return std::fabs(polygon_signed_area(p)); }

namespace geom {

inline double cross(Vec2 o, Vec2 a, Vec2 b) {
  return (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
}

inline bool segments_properly_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

inline bool is_self_intersecting(const Polyline& p) {
  const size_t n = p.size();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      // skip adjacent edges (shared endpoint)
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      if (segments_properly_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n])) return true;
    }
  return false;
}

// Sutherland-Hodgman clip of a convex subject by a convex CCW clip polygon.
inline Polyline clip_convex(const Polyline& subject, const Polyline& clip) {
  Polyline out = subject;
  for (size_t i = 0; i < clip.size() && !out.empty(); ++i) {
    Vec2 a = clip[i], b = clip[(i + 1) % clip.size()];
    Polyline in = out;
    out.clear();
    for (size_t j = 0; j < in.size(); ++j) {
      Vec2 p = in[j], q = in[(j + 1) % in.size()];
      double dp = cross(a, b, p), dq = cross(a, b, q);
      if (dp >= 0) out.push_back(p);
      if ((dp > 0 && dq < 0) || (dp < 0 && dq > 0)) {
        double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return out;
}

inline double tri_tri_intersection_area(Vec2 a0, Vec2 a1, Vec2 a2, Vec2 b0, Vec2 b1, Vec2 b2) {
  Polyline ta = {a0, a1, a2}, tb = {b0, b1, b2};
  if (polygon_signed_area(ta) < 0) std::swap(ta[1], ta[2]);
  if (polygon_signed_area(tb) < 0) std::swap(tb[1], tb[2]);
  Polyline inter = clip_convex(ta, tb);
  return inter.size() >= 3 ? polygon_area(inter) : 0.0;
}

// Intersection area of two simple polygons by fan decomposition with
// signed inclusion-exclusion over triangle pairs.
inline double intersection_area_fan(const Polyline& A, const Polyline& B) {
  double acc = 0;
  for (size_t i = 1; i + 1 < A.size(); ++i) {
    double sa = cross(A[0], A[i], A[i + 1]) >= 0 ? 1.0 : -1.0;
    for (size_t j = 1; j + 1 < B.size(); ++j) {
      double sb = cross(B[0], B[j], B[j + 1]) >= 0 ? 1.0 : -1.0;
      double t = tri_tri_intersection_area(A[0], A[i], A[i + 1], B[0], B[j], B[j + 1]);
      acc += sa * sb * t;
    }
  }
  return std::fabs(acc);
}

inline bool point_in_polygon_evenodd(Vec2 pt, const Polyline& poly) {
  bool inside = false;
  size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((poly[i].y > pt.y) != (poly[j].y > pt.y)) {
      double xint = poly[j].x + (pt.y - poly[j].y) / (poly[i].y - poly[j].y) * (poly[i].x - poly[j].x);
      if (pt.x < xint) inside = !inside;
    }
  }
  return inside;
}

}  // namespace geom

struct IouResult {
  double value = 0.0;
  bool approximate = false;  // raster fallback engaged
};

constexpr int kIouRaster = 512;

// area(A intersect B) / area(A union B). Exact clipping for simple rings;
// self-intersecting inputs fall back to 512x512 even-odd rasterization.
inline IouResult polygon_iou(const Polyline& a, const Polyline& b) {
  IouResult r;
  if (a.size() < 3 || b.size() < 3) return r;
  // bounding-box gate
  auto bbox = [](const Polyline& p) {
    double x0 = p[0].x, x1 = p[0].x, y0 = p[0].y, y1 = p[0].y;
    for (const Vec2& v : p) {
      x0 = std::min(x0, v.x);
      x1 = std::max(x1, v.x);
      y0 = std::min(y0, v.y);
      y1 = std::max(y1, v.y);
    }
    return std::array<double, 4>{x0, y0, x1, y1};
  };
  auto ba = bbox(a), bb = bbox(b);
  if (ba[2] <= bb[0] || bb[2] <= ba[0] || ba[3] <= bb[1] || bb[3] <= ba[1]) return r;

  if (geom::is_self_intersecting(a) || geom::is_self_intersecting(b)) {
    r.approximate = true;
    double x0 = std::min(ba[0], bb[0]), x1 = std::max(ba[2], bb[2]);
    double y0 = std::min(ba[1], bb[1]), y1 = std::max(ba[3], bb[3]);
    int na = 0, nb = 0, ni = 0;
    for (int gy = 0; gy < kIouRaster; ++gy)
      for (int gx = 0; gx < kIouRaster; ++gx) {
        Vec2 pt{x0 + (x1 - x0) * (gx + 0.5) / kIouRaster, y0 + (y1 - y0) * (gy + 0.5) / kIouRaster};
        bool ia = geom::point_in_polygon_evenodd(pt, a);
        bool ib = geom::point_in_polygon_evenodd(pt, b);
        na += ia;
        nb += ib;
        ni += (ia && ib);
      }
    int nu = na + nb - ni;
    r.value = nu > 0 ? double(ni) / double(nu) : 0.0;
    return r;
  }
  double area_a = polygon_area(a), area_b = polygon_area(b);
  if (area_a <= 0 || area_b <= 0) return r;
  double inter = geom::intersection_area_fan(a, b);
  inter = std::min(inter, std::min(area_a, area_b));
  double uni = area_a + area_b - inter;
  r.value = uni > 0 ? inter / uni : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// transcript utilities
// ---------------------------------------------------------------------------
inline size_t levenshtein(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    prev.swap(cur);
  }
  return prev[m];
}

inline double normalized_edit_distance(const std::string& a, const std::string& b) {
  if (a.empty() && b.empty()) return 0.0;
  return double(levenshtein(a, b)) / double(std::max(a.size(), b.size()));
}

// Case-fold and strip symbols outside the active character set.
inline std::string normalize_transcript(const std::string& s, const std::string& charset) {
  std::string out;
  for (char ch : s) {
    char c = char(std::tolower(static_cast<unsigned char>(ch)));
    if (charset.empty() || charset.find(c) != std::string::npos) out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------
struct EvalConfig {
  double iou_threshold = 0.5;
  std::string charset;  // active character set for normalization ("" = keep all)
  double line_distance_threshold = 0.05;  // center-line protocol
};

struct GtEval {
  Polyline polygon;
  Polyline center;
  std::string transcript;
  int script = 0;
};

inline GtEval gt_eval_view(const TextInstanceGT& gt) {
  GtEval e;
  e.center = gt.center;
  e.transcript = gt.transcript;
  e.script = gt.script;
  if (gt.has_boundary()) {
    for (const Vec2& p : gt.top) e.polygon.push_back(p);
    for (size_t i = gt.bottom.size(); i-- > 0;) e.polygon.push_back(gt.bottom[i]);
  }
  return e;
}

struct Prh {
  double precision = 0, recall = 0, hmean = 0;
  int tp = 0, pred_count = 0, gt_count = 0;
};

namespace detail {

inline Prh prh_from_counts(int tp, int preds, int gts) {
  Prh r;
  r.tp = tp;
  r.pred_count = preds;
  r.gt_count = gts;
  r.precision = preds > 0 ? double(tp) / preds : 0.0;
  r.recall = gts > 0 ? double(tp) / gts : 0.0;
  r.hmean = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

// Greedy one-to-one matching by descending IoU among candidate pairs that
// already satisfy the TP rule; returns matched (pred, gt) pairs.
template <class TpRule>
std::vector<std::pair<int, int>> greedy_iou_match(const std::vector<SpottingResult>& preds,
                                                  const std::vector<GtEval>& gts,
                                                  double iou_threshold, TpRule&& rule) {
  struct Cand {
    double iou;
    int p, g;
  };
  std::vector<Cand> cands;
  for (int p = 0; p < int(preds.size()); ++p)
    for (int g = 0; g < int(gts.size()); ++g) {
      double iou = polygon_iou(preds[size_t(p)].polygon, gts[size_t(g)].polygon).value;
      if (iou >= iou_threshold && rule(preds[size_t(p)], gts[size_t(g)]))
        cands.push_back({iou, p, g});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.iou > b.iou; });
  std::vector<char> pu(preds.size(), 0), gu(gts.size(), 0);
  std::vector<std::pair<int, int>> out;
  for (const Cand& c : cands) {
    if (pu[size_t(c.p)] || gu[size_t(c.g)]) continue;
    pu[size_t(c.p)] = gu[size_t(c.g)] = 1;
    out.push_back({c.p, c.g});
  }
  return out;
}

}  // namespace detail

// Per-image prediction/GT pairs aggregated over a whole evaluation set.
struct EvalBatch {
  std::vector<std::vector<SpottingResult>> preds;
  std::vector<std::vector<GtEval>> gts;
};

inline Prh detection_prh(const EvalBatch& batch, const EvalConfig& cfg = {}) {
  int tp = 0, np = 0, ng = 0;
  for (size_t i = 0; i < batch.preds.size(); ++i) {
    auto matches = detail::greedy_iou_match(batch.preds[i], batch.gts[i], cfg.iou_threshold,
                                            [](const SpottingResult&, const GtEval&) { return true; });
    tp += int(matches.size());
    np += int(batch.preds[i].size());
    ng += int(batch.gts[i].size());
  }
  return detail::prh_from_counts(tp, np, ng);
}

inline Prh e2e_prh(const EvalBatch& batch, const EvalConfig& cfg = {}) {
  int tp = 0, np = 0, ng = 0;
  for (size_t i = 0; i < batch.preds.size(); ++i) {
    auto rule = [&](const SpottingResult& p, const GtEval& g) {
      return normalize_transcript(p.transcript, cfg.charset) ==
             normalize_transcript(g.transcript, cfg.charset);
    };
    auto matches = detail::greedy_iou_match(batch.preds[i], batch.gts[i], cfg.iou_threshold, rule);
    tp += int(matches.size());
    np += int(batch.preds[i].size());
    ng += int(batch.gts[i].size());
  }
  return detail::prh_from_counts(tp, np, ng);
}

inline Prh det_script_prh(const EvalBatch& batch, const EvalConfig& cfg = {}) {
  int tp = 0, np = 0, ng = 0;
  for (size_t i = 0; i < batch.preds.size(); ++i) {
    auto rule = [](const SpottingResult& p, const GtEval& g) { return p.script == g.script; };
    auto matches = detail::greedy_iou_match(batch.preds[i], batch.gts[i], cfg.iou_threshold, rule);
    tp += int(matches.size());
    np += int(batch.preds[i].size());
    ng += int(batch.gts[i].size());
  }
  return detail::prh_from_counts(tp, np, ng);
}

// 1 - mean normalized edit distance over matched pairs and unmatched units
// (every unmatched GT or prediction contributes a full miss).
inline double one_minus_ned(const EvalBatch& batch, const EvalConfig& cfg = {}) {
  double ned_sum = 0;
  int units = 0;
  for (size_t i = 0; i < batch.preds.size(); ++i) {
    auto matches = detail::greedy_iou_match(batch.preds[i], batch.gts[i], cfg.iou_threshold,
                                            [](const SpottingResult&, const GtEval&) { return true; });
    std::vector<char> pu(batch.preds[i].size(), 0), gu(batch.gts[i].size(), 0);
    for (auto [p, g] : matches) {
      pu[size_t(p)] = gu[size_t(g)] = 1;
      ned_sum += normalized_edit_distance(
          normalize_transcript(batch.preds[i][size_t(p)].transcript, cfg.charset),
          normalize_transcript(batch.gts[i][size_t(g)].transcript, cfg.charset));
      ++units;
    }
    for (size_t p = 0; p < pu.size(); ++p)
      if (!pu[p]) {
        ned_sum += 1.0;
        ++units;
      }
    for (size_t g = 0; g < gu.size(); ++g)
      if (!gu[g]) {
        ned_sum += 1.0;
        ++units;
      }
  }
  if (units == 0) return 1.0;
  return 1.0 - ned_sum / double(units);
}

// Center-line end-to-end protocol for boundary-free (line mode) models:
// greedy matching by ascending mean center-point L1 distance, a pair is a
// TP when the distance clears the threshold and transcripts match.
inline Prh e2e_line_prh(const EvalBatch& batch, const EvalConfig& cfg = {}) {
  int tp = 0, np = 0, ng = 0;
  for (size_t i = 0; i < batch.preds.size(); ++i) {
    const auto& preds = batch.preds[i];
    const auto& gts = batch.gts[i];
    struct Cand {
      double dist;
      int p, g;
    };
    std::vector<Cand> cands;
    for (int p = 0; p < int(preds.size()); ++p)
      for (int g = 0; g < int(gts.size()); ++g) {
        const Polyline& pc = preds[size_t(p)].center_line;
        const Polyline& gc = gts[size_t(g)].center;
        if (pc.size() != gc.size() || pc.empty()) continue;
        double d = 0;
        for (size_t n = 0; n < pc.size(); ++n)
          d += std::fabs(pc[n].x - gc[n].x) + std::fabs(pc[n].y - gc[n].y);
        d /= double(pc.size());
        bool text_ok = normalize_transcript(preds[size_t(p)].transcript, cfg.charset) ==
                       normalize_transcript(gts[size_t(g)].transcript, cfg.charset);
        if (d <= cfg.line_distance_threshold && text_ok) cands.push_back({d, p, g});
      }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.dist < b.dist; });
    std::vector<char> pu(preds.size(), 0), gu(gts.size(), 0);
    for (const Cand& c : cands) {
      if (pu[size_t(c.p)] || gu[size_t(c.g)]) continue;
      pu[size_t(c.p)] = gu[size_t(c.g)] = 1;
      ++tp;
    }
    np += int(preds.size());
    ng += int(gts.size());
  }
  return detail::prh_from_counts(tp, np, ng);
}

// Script routing accuracy over IoU-matched pairs.
inline double script_routing_accuracy(const EvalBatch& batch, const EvalConfig& cfg = {}) {
  int correct = 0, total = 0;
  for (size_t i = 0; i < batch.preds.size(); ++i) {
    auto matches = detail::greedy_iou_match(batch.preds[i], batch.gts[i], cfg.iou_threshold,
                                            [](const SpottingResult&, const GtEval&) { return true; });
    for (auto [p, g] : matches) {
      ++total;
      if (batch.preds[i][size_t(p)].script == batch.gts[i][size_t(g)].script) ++correct;
    }
  }
  return total > 0 ? double(correct) / total : 0.0;
}

}  // namespace textspot
