#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "textspot/eval.hpp"
#include "textspot/rng.hpp"

using namespace textspot;

namespace {

Polyline square(double x0, double y0, double side) {
  return {{x0, y0}, {x0 + side, y0}, {x0 + side, y0 + side}, {x0, y0 + side}};
}

// memoized recursive edit-distance oracle
size_t lev_oracle(const std::string& a, const std::string& b,
                  std::map<std::pair<std::string, std::string>, size_t>& memo) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  auto key = std::make_pair(a, b);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  size_t d = std::min({lev_oracle(a.substr(1), b, memo) + 1, lev_oracle(a, b.substr(1), memo) + 1,
                       lev_oracle(a.substr(1), b.substr(1), memo) + (a[0] == b[0] ? 0 : 1)});
  memo[key] = d;
  return d;
}

SpottingResult pred_of(const Polyline& poly, const std::string& text, int script = 0) {
  SpottingResult r;
  r.polygon = poly;
  r.transcript = text;
  r.confidence = 0.9;
  r.script = script;
  return r;
}

GtEval gt_of(const Polyline& poly, const std::string& text, int script = 0) {
  GtEval g;
  g.polygon = poly;
  g.transcript = text;
  g.script = script;
  return g;
}

}  // namespace

TEST(PolygonIou, IdenticalAndDisjoint) {
  Polyline a = square(0.1, 0.1, 0.3);
  EXPECT_NEAR(polygon_iou(a, a).value, 1.0, 1e-12);
  Polyline b = square(0.6, 0.6, 0.2);
  EXPECT_DOUBLE_EQ(polygon_iou(a, b).value, 0.0);
}

TEST(PolygonIou, ShiftedSquareOneThird) {
  // unit square vs the same square shifted by half: 0.5 / 1.5
  Polyline a = square(0.0, 0.0, 1.0);
  Polyline b = square(0.5, 0.0, 1.0);
  IouResult r = polygon_iou(a, b);
  EXPECT_FALSE(r.approximate);
  EXPECT_NEAR(r.value, 1.0 / 3.0, 1e-12);
}

TEST(PolygonIou, DegenerateZero) {
  Polyline degenerate = {{0.2, 0.2}, {0.4, 0.2}, {0.6, 0.2}};  // zero area
  Polyline b = square(0.1, 0.1, 0.4);
  EXPECT_DOUBLE_EQ(polygon_iou(degenerate, b).value, 0.0);
  EXPECT_DOUBLE_EQ(polygon_iou(b, degenerate).value, 0.0);
}

TEST(PolygonIou, NonConvexBandExact) {
  // an L-shaped polygon against a square covering its lower half
  Polyline ell = {{0, 0}, {0.4, 0}, {0.4, 0.2}, {0.2, 0.2}, {0.2, 0.6}, {0, 0.6}};
  double area_ell = polygon_area(ell);
  EXPECT_NEAR(area_ell, 0.4 * 0.2 + 0.2 * 0.4, 1e-12);
  Polyline sq = square(0.0, 0.0, 0.2);
  IouResult r = polygon_iou(ell, sq);
  double inter = 0.2 * 0.2;
  double uni = area_ell + 0.04 - inter;
  EXPECT_NEAR(r.value, inter / uni, 1e-12);
}

TEST(PolygonIou, SymmetricAndBounded) {
  Rng rng(8);
  for (int trial = 0; trial < 60; ++trial) {
    Polyline a = square(rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0.1, 0.5));
    // a random convex quad
    Polyline b = {{rng.uniform(0, 0.4), rng.uniform(0, 0.4)},
                  {rng.uniform(0.6, 1.0), rng.uniform(0, 0.4)},
                  {rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)},
                  {rng.uniform(0, 0.4), rng.uniform(0.6, 1.0)}};
    double ab = polygon_iou(a, b).value;
    double ba = polygon_iou(b, a).value;
    EXPECT_NEAR(ab, ba, 1e-9);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(PolygonIou, SelfIntersectingFallsBackToRaster) {
  // bowtie vs square: the even-odd rasterization path engages, flagged
  Polyline bowtie = {{0.0, 0.0}, {0.4, 0.4}, {0.4, 0.0}, {0.0, 0.4}};
  Polyline sq = square(0.0, 0.0, 0.4);
  IouResult r = polygon_iou(bowtie, sq);
  EXPECT_TRUE(r.approximate);
  // even-odd bowtie area is 2 triangles = 0.4*0.4/2... each wing 0.04; IoU ~ 0.08/0.16
  EXPECT_NEAR(r.value, 0.5, 0.02);
}

TEST(Levenshtein, HandValuesAndOracle) {
  EXPECT_EQ(levenshtein("abc", "abd"), 1u);
  EXPECT_EQ(levenshtein("", "xyz"), 3u);
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
  // exhaustive against the memoized oracle: all strings of length <= 5
  // over a 3-symbol alphabet
  std::vector<std::string> all;
  std::function<void(std::string)> gen = [&](std::string s) {
    all.push_back(s);
    if (s.size() == 5) return;
    for (char c : {'a', 'b', 'c'}) gen(s + c);
  };
  gen("");
  std::map<std::pair<std::string, std::string>, size_t> memo;
  int checked = 0;
  for (const auto& a : all)
    for (const auto& b : all) {
      ASSERT_EQ(levenshtein(a, b), lev_oracle(a, b, memo)) << a << " vs " << b;
      ++checked;
    }
  EXPECT_EQ(checked, 364 * 364);
}

TEST(Ned, PairValuesAndEdgeCases) {
  EXPECT_DOUBLE_EQ(normalized_edit_distance("abc", "abd"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(normalized_edit_distance("", ""), 0.0);
  EXPECT_DOUBLE_EQ(normalized_edit_distance("", "ab"), 1.0);
}

TEST(Normalize, CaseFoldAndStrip) {
  EXPECT_EQ(normalize_transcript("AbC!", "abc"), "abc");
  EXPECT_EQ(normalize_transcript("xyz", "abc"), "");
  EXPECT_EQ(normalize_transcript("MiXeD", ""), "mixed");
}

TEST(DetectionPrh, PerfectAndDegenerate) {
  EvalBatch batch;
  Polyline a = square(0.1, 0.1, 0.3), b = square(0.6, 0.1, 0.3);
  batch.preds = {{pred_of(a, "x"), pred_of(b, "y")}};
  batch.gts = {{gt_of(a, "x"), gt_of(b, "y")}};
  Prh r = detection_prh(batch);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.hmean, 1.0);

  EvalBatch none;
  none.preds = {{}};
  none.gts = {{gt_of(a, "x")}};
  Prh rn = detection_prh(none);
  EXPECT_DOUBLE_EQ(rn.precision, 0.0);
  EXPECT_DOUBLE_EQ(rn.recall, 0.0);
  EXPECT_DOUBLE_EQ(rn.hmean, 0.0);
}

TEST(DetectionPrh, TwoGtOneCorrectPred) {
  EvalBatch batch;
  Polyline a = square(0.1, 0.1, 0.3), b = square(0.6, 0.1, 0.3);
  batch.preds = {{pred_of(a, "x")}};
  batch.gts = {{gt_of(a, "x"), gt_of(b, "y")}};
  Prh r = detection_prh(batch);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_NEAR(r.hmean, 2.0 / 3.0, 1e-12);
}

TEST(E2ePrh, WrongTranscriptIsFpAndFn) {
  EvalBatch batch;
  Polyline a = square(0.1, 0.1, 0.3);
  batch.preds = {{pred_of(a, "cat")}};
  batch.gts = {{gt_of(a, "dog")}};
  Prh r = e2e_prh(batch);
  EXPECT_EQ(r.tp, 0);
  EXPECT_DOUBLE_EQ(r.hmean, 0.0);
  // detection still counts it
  EXPECT_EQ(detection_prh(batch).tp, 1);
}

TEST(E2ePrh, CaseFoldingMatch) {
  EvalBatch batch;
  Polyline a = square(0.1, 0.1, 0.3);
  batch.preds = {{pred_of(a, "CaT")}};
  batch.gts = {{gt_of(a, "cat")}};
  EXPECT_EQ(e2e_prh(batch).tp, 1);
}

TEST(E2ePrh, MixedHandCase) {
  // three GT: one perfect, one wrong text, one missed; plus one stray pred
  EvalBatch batch;
  Polyline g1 = square(0.05, 0.05, 0.2), g2 = square(0.4, 0.05, 0.2), g3 = square(0.75, 0.05, 0.2);
  Polyline stray = square(0.05, 0.6, 0.2);
  batch.preds = {{pred_of(g1, "aa"), pred_of(g2, "xx"), pred_of(stray, "zz")}};
  batch.gts = {{gt_of(g1, "aa"), gt_of(g2, "bb"), gt_of(g3, "cc")}};
  Prh r = e2e_prh(batch);
  EXPECT_EQ(r.tp, 1);
  EXPECT_DOUBLE_EQ(r.precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0 / 3.0);
  // e2e TPs can never exceed detection TPs
  EXPECT_LE(r.tp, detection_prh(batch).tp);
}

TEST(DetScriptPrh, ScriptGate) {
  EvalBatch batch;
  Polyline a = square(0.1, 0.1, 0.3), b = square(0.6, 0.1, 0.3);
  batch.preds = {{pred_of(a, "x", 0), pred_of(b, "y", 1)}};
  batch.gts = {{gt_of(a, "x", 1), gt_of(b, "y", 1)}};
  Prh r = det_script_prh(batch);
  EXPECT_EQ(r.tp, 1);  // only the second pair agrees on script
  // single-script data reduces to detection
  for (auto& p : batch.preds[0]) p.script = 1;
  EXPECT_EQ(det_script_prh(batch).tp, detection_prh(batch).tp);
}

TEST(OneMinusNed, HandCases) {
  EvalBatch batch;
  Polyline a = square(0.1, 0.1, 0.3);
  batch.preds = {{pred_of(a, "abc")}};
  batch.gts = {{gt_of(a, "abc")}};
  EXPECT_DOUBLE_EQ(one_minus_ned(batch), 1.0);

  batch.preds[0][0].transcript = "abd";
  EXPECT_NEAR(one_minus_ned(batch), 1.0 - 1.0 / 3.0, 1e-12);

  // no predictions at all
  EvalBatch empty;
  empty.preds = {{}};
  empty.gts = {{gt_of(a, "abc"), gt_of(square(0.6, 0.1, 0.3), "de")}};
  EXPECT_DOUBLE_EQ(one_minus_ned(empty), 0.0);
}

TEST(OneMinusNed, InstanceOrderInvariance) {
  Polyline a = square(0.05, 0.05, 0.25), b = square(0.4, 0.05, 0.25), c = square(0.7, 0.05, 0.25);
  EvalBatch b1;
  b1.preds = {{pred_of(a, "ab"), pred_of(b, "cd"), pred_of(c, "zz")}};
  b1.gts = {{gt_of(a, "ab"), gt_of(b, "ce"), gt_of(c, "xy")}};
  EvalBatch b2;
  b2.preds = {{pred_of(c, "zz"), pred_of(a, "ab"), pred_of(b, "cd")}};
  b2.gts = {{gt_of(b, "ce"), gt_of(c, "xy"), gt_of(a, "ab")}};
  EXPECT_NEAR(one_minus_ned(b1), one_minus_ned(b2), 1e-12);
}

TEST(E2eLine, CenterLineProtocol) {
  EvalBatch batch;
  SpottingResult p1;
  p1.center_line = {{0.1, 0.5}, {0.3, 0.5}, {0.5, 0.5}};
  p1.transcript = "ab";
  SpottingResult p2 = p1;
  p2.center_line = {{0.1, 0.9}, {0.3, 0.9}, {0.5, 0.9}};
  p2.transcript = "cd";
  GtEval g1;
  g1.center = {{0.11, 0.5}, {0.31, 0.5}, {0.51, 0.5}};
  g1.transcript = "ab";
  GtEval g2;
  g2.center = {{0.1, 0.2}, {0.3, 0.2}, {0.5, 0.2}};
  g2.transcript = "cd";
  batch.preds = {{p1, p2}};
  batch.gts = {{g1, g2}};
  Prh r = e2e_line_prh(batch);
  EXPECT_EQ(r.tp, 1);  // p1 close + right text; p2 is 0.7 away from g2
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
}

TEST(RoutingAccuracy, MatchedPairsOnly) {
  EvalBatch batch;
  Polyline a = square(0.1, 0.1, 0.3), b = square(0.6, 0.1, 0.3);
  batch.preds = {{pred_of(a, "x", 0), pred_of(b, "y", 1)}};
  batch.gts = {{gt_of(a, "x", 0), gt_of(b, "y", 0)}};
  EXPECT_DOUBLE_EQ(script_routing_accuracy(batch), 0.5);
}
