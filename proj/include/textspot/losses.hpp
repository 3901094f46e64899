#pragma once
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "textspot/ctc.hpp"
#include "textspot/matching.hpp"
#include "textspot/tensor.hpp"
#include "textspot/types.hpp"

// Training losses: focal instance classification, CTC transcription, L1
// center/boundary regression, script identification, and the per-layer /
// encoder aggregation report. Losses are summed over instances here;
// normalization by the batch GT count happens once in the training step.

namespace textspot {

struct LossWeights {
  double cls = 1.0;
  double text = 0.5;
  double coord = 1.0;
  double bd = 0.5;
  double script = 1.0;  // multilingual only
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  MatchWeights match() const {
    MatchWeights w;
    w.cls = cls;
    w.coord = coord;
    w.text = text;
    w.script = script;
    w.focal_alpha = focal_alpha;
    w.focal_gamma = focal_gamma;
    return w;
  }
};

// CTC negative log-likelihood as a graph node: logits [T,C], labels in
// [1,C). Inadmissible targets yield the finite sentinel with zero gradient
// so a bad sample cannot destroy a training batch.
inline Tensor ctc_loss(const Tensor& logits, const std::vector<int>& labels,
                       bool* flagged = nullptr) {
  const Shape& s = logits.shape();
  if (s.size() != 2) op_fail("ctc_loss", "logits must be [T,C], got " + shape_str(s));
  const int T = s[0], C = s[1];
  if (labels.empty()) op_fail("ctc_loss", "empty target");
  for (int l : labels)
    if (l < 1 || l >= C)
      op_fail("ctc_loss", "label " + std::to_string(l) + " outside [1," + std::to_string(C) + ")");
  if (flagged) *flagged = false;
  if (!ctc_admissible(T, labels)) {
    if (flagged) *flagged = true;
    return make_op({1}, {kCtcSentinel}, {logits}, [](Node&) {});
  }
  auto grad = std::make_shared<std::vector<double>>(size_t(T) * size_t(C), 0.0);
  double loss = ctc_nll_grad(logits.data().data(), T, C, labels, grad->data());
  Tensor L = logits;
  return make_op({1}, {loss}, {logits}, [L, grad](Node& self) {
    Node* ln = L.node().get();
    ln->ensure_grad();
    double g = self.grad[0];
    for (size_t i = 0; i < grad->size(); ++i) ln->grad[i] += g * (*grad)[i];
  });
}

// Focal instance loss over per-point probabilities [K,N]: probabilities are
// averaged into one score per query first, matched queries pull toward 1,
// unmatched toward 0; summed over queries.
inline Tensor focal_instance_loss(const Tensor& probs, const std::vector<bool>& matched,
                                  double alpha = 0.25, double gamma = 2.0) {
  const Shape& s = probs.shape();
  if (s.size() != 2) op_fail("focal_instance_loss", "probs must be [K,N], got " + shape_str(s));
  const int K = s[0];
  if (int(matched.size()) != K) op_fail("focal_instance_loss", "matched flag count mismatch");
  Tensor b = clamp(mean_axis(probs, 1), 1e-8, 1.0 - 1e-8);  // [K]
  std::vector<double> ind(size_t(K), 0.0);
  for (int k = 0; k < K; ++k) ind[size_t(k)] = matched[size_t(k)] ? 1.0 : 0.0;
  Tensor m = Tensor::from({K}, std::move(ind));
  Tensor one_minus_b = add_scalar(neg(b), 1.0);
  Tensor pos = neg(mul(pow_const(one_minus_b, gamma), tlog(b)));
  Tensor negv = neg(mul(pow_const(b, gamma), tlog(one_minus_b)));
  Tensor per_query = add(mul(m, mul_scalar(pos, alpha)),
                         mul(add_scalar(neg(m), 1.0), mul_scalar(negv, 1.0 - alpha)));
  return sum_all(per_query);
}

// L1 over matched center points: sum over matched queries and the N points.
inline Tensor coord_loss(const Tensor& centers, const std::vector<TextInstanceGT>& gts,
                         const MatchAssignment& assignment) {
  const Shape& s = centers.shape();
  if (s.size() != 3 || s[2] != 2)
    op_fail("coord_loss", "centers must be [K,N,2], got " + shape_str(s));
  if (assignment.pairs.empty()) return Tensor::scalar(0.0);
  const int N = s[1];
  std::vector<int> rows;
  std::vector<double> target;
  for (auto [g, k] : assignment.pairs) {
    rows.push_back(k);
    const Polyline& c = gts[size_t(g)].center;
    if (int(c.size()) != N) op_fail("coord_loss", "GT point count mismatch");
    for (const Vec2& p : c) {
      target.push_back(p.x);
      target.push_back(p.y);
    }
  }
  Tensor pred = gather_rows(centers, rows);
  Tensor gt = Tensor::from({int(rows.size()), N, 2}, std::move(target));
  return sum_all(tabs(sub(pred, gt)));
}

// L1 over matched top and bottom boundary points.
inline Tensor boundary_loss(const Tensor& top_pred, const Tensor& bot_pred,
                            const std::vector<TextInstanceGT>& gts,
                            const MatchAssignment& assignment) {
  const Shape& s = top_pred.shape();
  if (s.size() != 3 || s[2] != 2)
    op_fail("boundary_loss", "boundary points must be [K,N,2], got " + shape_str(s));
  if (assignment.pairs.empty()) return Tensor::scalar(0.0);
  const int N = s[1];
  std::vector<int> rows;
  std::vector<double> top_t, bot_t;
  for (auto [g, k] : assignment.pairs) {
    const auto& gt = gts[size_t(g)];
    if (!gt.has_boundary()) op_fail("boundary_loss", "GT instance lacks boundary annotations");
    rows.push_back(k);
    for (const Vec2& p : gt.top) {
      top_t.push_back(p.x);
      top_t.push_back(p.y);
    }
    for (const Vec2& p : gt.bottom) {
      bot_t.push_back(p.x);
      bot_t.push_back(p.y);
    }
  }
  Tensor tp = gather_rows(top_pred, rows);
  Tensor bp = gather_rows(bot_pred, rows);
  Tensor tg = Tensor::from({int(rows.size()), N, 2}, std::move(top_t));
  Tensor bg = Tensor::from({int(rows.size()), N, 2}, std::move(bot_t));
  return add(sum_all(tabs(sub(tp, tg))), sum_all(tabs(sub(bp, bg))));
}

// Cross-entropy of script logits [K,S] against the matched GT scripts.
inline Tensor script_identification_loss(const Tensor& script_logits,
                                         const std::vector<TextInstanceGT>& gts,
                                         const MatchAssignment& assignment) {
  const Shape& s = script_logits.shape();
  if (s.size() != 2) op_fail("script_loss", "logits must be [K,S], got " + shape_str(s));
  if (assignment.pairs.empty()) return Tensor::scalar(0.0);
  const int S = s[1];
  std::vector<int> rows;
  std::vector<double> onehot;
  for (auto [g, k] : assignment.pairs) {
    rows.push_back(k);
    for (int c = 0; c < S; ++c) onehot.push_back(gts[size_t(g)].script == c ? 1.0 : 0.0);
  }
  Tensor picked = gather_rows(script_logits, rows);
  Tensor logp = tlog(clamp_min(softmax(picked), 1e-30));
  Tensor oh = Tensor::from({int(rows.size()), S}, std::move(onehot));
  return neg(sum_all(mul(logp, oh)));
}

struct LossTerms {
  double cls = 0, text = 0, coord = 0, bd = 0, script = 0;

  double weighted_total(const LossWeights& w, bool with_bd, bool with_script) const {
    double t = w.cls * cls + w.text * text + w.coord * coord;
    if (with_bd) t += w.bd * bd;
    if (with_script) t += w.script * script;
    return t;
  }
};

struct LossReport {
  std::vector<LossTerms> decoder;  // one entry per decoder layer
  LossTerms encoder;
  double total = 0.0;
  int gt_count = 0;
  bool boundary_enabled = true;
  bool script_enabled = false;
  int ctc_flagged = 0;  // inadmissible targets hit this step

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& t : decoder)
      layers.push_back({{"cls", t.cls},
                        {"text", t.text},
                        {"coord", t.coord},
                        {"bd", t.bd},
                        {"script", t.script}});
    return {{"total", total},
            {"gt_count", gt_count},
            {"decoder", layers},
            {"encoder", {{"cls", encoder.cls}, {"coord", encoder.coord}}},
            {"ctc_flagged", ctc_flagged}};
  }
};

}  // namespace textspot
