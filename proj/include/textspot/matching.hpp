#pragma once
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "textspot/ctc.hpp"
#include "textspot/types.hpp"

// Bipartite matching between ground-truth instances and query predictions:
// the Hungarian solver, the focal matching term, the composite spotting
// cost, the script-aware variant, and the encoder-side proposal matching.
// Costs are computed on plain values only; no gradients flow through here.

namespace textspot {

struct MatchAssignment {
  std::vector<std::pair<int, int>> pairs;  // (gt, query), injective in gt
  double total_cost = 0.0;

  // query -> gt inverse map (-1 when unmatched)
  std::vector<int> inverse(int k_total) const {
    std::vector<int> inv(size_t(k_total), -1);
    for (auto [g, k] : pairs) inv[size_t(k)] = g;
    return inv;
  }
};

struct CostMatrix {
  int G = 0, K = 0;
  std::vector<double> values;  // G*K
  // per-entry breakdown, same layout
  std::vector<double> cls, text, coord, script;

  double& at(int g, int k) { return values[size_t(g) * size_t(K) + size_t(k)]; }
  double at(int g, int k) const { return values[size_t(g) * size_t(K) + size_t(k)]; }
};

// Globally minimal injective assignment of G rows to K >= G columns
// (Jonker-Volgenant shortest augmenting paths). Ties are broken toward
// lexicographically smallest (g, k) via an infinitesimal ordering bias.
inline MatchAssignment hungarian(const std::vector<std::vector<double>>& cost) {
  const int G = int(cost.size());
  MatchAssignment out;
  if (G == 0) return out;
  const int K = int(cost[0].size());
  if (G > K)
    throw std::runtime_error("hungarian: more rows (" + std::to_string(G) + ") than columns (" +
                             std::to_string(K) + ")");
  double max_abs = 1.0;
  for (const auto& row : cost) {
    if (int(row.size()) != K) throw std::runtime_error("hungarian: ragged cost matrix");
    for (double v : row) {
      if (!std::isfinite(v)) throw std::runtime_error("hungarian: non-finite cost entry");
      max_abs = std::max(max_abs, std::fabs(v));
    }
  }
  // Lexicographic tie-break: earlier rows get priority for smaller columns.
  const double tie_eps = 1e-12 * max_abs / double(K + 1);
  auto c = [&](int g, int k) {
    return cost[size_t(g)][size_t(k)] + tie_eps * double(k + 1) * std::pow(0.5, std::min(g, 40));
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(size_t(G + 1), 0.0), v(size_t(K + 1), 0.0);
  std::vector<int> p(size_t(K + 1), 0), way(size_t(K + 1), 0);
  for (int i = 1; i <= G; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(K + 1), inf);
    std::vector<char> used(size_t(K + 1), 0);
    do {
      used[size_t(j0)] = 1;
      int i0 = p[size_t(j0)], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= K; ++j)
        if (!used[size_t(j)]) {
          double cur = c(i0 - 1, j - 1) - u[size_t(i0)] - v[size_t(j)];
          if (cur < minv[size_t(j)]) {
            minv[size_t(j)] = cur;
            way[size_t(j)] = j0;
          }
          if (minv[size_t(j)] < delta) {
            delta = minv[size_t(j)];
            j1 = j;
          }
        }
      for (int j = 0; j <= K; ++j) {
        if (used[size_t(j)]) {
          u[size_t(p[size_t(j)])] += delta;
          v[size_t(j)] -= delta;
        } else {
          minv[size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[size_t(j0)] != 0);
    do {
      int j1 = way[size_t(j0)];
      p[size_t(j0)] = p[size_t(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::pair<int, int>> pairs;
  for (int j = 1; j <= K; ++j)
    if (p[size_t(j)]) pairs.push_back({p[size_t(j)] - 1, j - 1});
  std::sort(pairs.begin(), pairs.end());
  out.pairs = std::move(pairs);
  for (auto [g, k] : out.pairs) out.total_cost += cost[size_t(g)][size_t(k)];
  return out;
}

inline MatchAssignment hungarian(const CostMatrix& cm) {
  std::vector<std::vector<double>> rows(size_t(cm.G), std::vector<double>(size_t(cm.K), 0.0));
  for (int g = 0; g < cm.G; ++g)
    for (int k = 0; k < cm.K; ++k) rows[size_t(g)][size_t(k)] = cm.at(g, k);
  return hungarian(rows);
}

// FL'(x) = -alpha (1-x)^gamma log(x) + (1-alpha) x^gamma log(1-x):
// the positive-minus-negative focal classification term used in matching.
inline double focal_cost_term(double prob, double alpha = 0.25, double gamma = 2.0) {
  const double eps = 1e-8;
  double x = std::min(std::max(prob, eps), 1.0 - eps);
  return -alpha * std::pow(1.0 - x, gamma) * std::log(x) +
         (1.0 - alpha) * std::pow(x, gamma) * std::log(1.0 - x);
}

inline double l1_point_sum(const Polyline& a, const Polyline& b) {
  if (a.size() != b.size()) throw std::runtime_error("l1_point_sum: length mismatch");
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i].x - b[i].x) + std::fabs(a[i].y - b[i].y);
  return s;
}

// Plain-value snapshot of one decoder layer's predictions for one image.
struct PredSnapshot {
  int K = 0, N = 0;
  std::vector<double> inst_prob;   // K, mean over N of per-point sigmoid
  std::vector<Polyline> centers;   // K polylines of N points
  struct HeadLogits {
    int classes = 0;
    std::vector<double> logits;  // K * N * classes
  };
  std::vector<HeadLogits> heads;     // one per script (single entry when monolingual)
  std::vector<double> script_logits;  // K * S, empty when monolingual
  int script_count = 0;

  const double* char_logits(int head, int k) const {
    return heads[size_t(head)].logits.data() + size_t(k) * size_t(N) * size_t(heads[size_t(head)].classes);
  }
};

struct MatchWeights {
  double cls = 1.0;
  double coord = 1.0;
  double text = 0.5;
  double script = 1.0;
  double script_penalty = 20.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

// Eq-style composite cost: weighted focal term + CTC text cost + summed L1
// between GT and predicted center points. Monolingual path (head 0).
inline CostMatrix spotting_cost(const std::vector<TextInstanceGT>& gts, const PredSnapshot& pred,
                                const MatchWeights& w = {}) {
  CostMatrix cm;
  cm.G = int(gts.size());
  cm.K = pred.K;
  size_t total = size_t(cm.G) * size_t(cm.K);
  cm.values.assign(total, 0.0);
  cm.cls.assign(total, 0.0);
  cm.text.assign(total, 0.0);
  cm.coord.assign(total, 0.0);
  cm.script.assign(total, 0.0);
  const int C = pred.heads.at(0).classes;
  for (int g = 0; g < cm.G; ++g) {
    const auto& gt = gts[size_t(g)];
    for (int k = 0; k < cm.K; ++k) {
      size_t idx = size_t(g) * size_t(cm.K) + size_t(k);
      cm.cls[idx] = w.cls * focal_cost_term(pred.inst_prob[size_t(k)], w.focal_alpha, w.focal_gamma);
      cm.coord[idx] = w.coord * l1_point_sum(gt.center, pred.centers[size_t(k)]);
      cm.text[idx] =
          w.text * ctc_nll_or_sentinel(pred.char_logits(0, k), pred.N, C, gt.labels);
      cm.values[idx] = cm.cls[idx] + cm.coord[idx] + cm.text[idx];
    }
  }
  return cm;
}

// Script-aware assembly: the text term is computed with the head of the
// GT's script; entries whose predicted script (argmax) disagrees with the
// GT script get the text term overwritten by a flat penalty; a script
// cross-entropy term is added on top.
inline CostMatrix script_aware_cost(const std::vector<TextInstanceGT>& gts,
                                    const PredSnapshot& pred, const MatchWeights& w = {}) {
  CostMatrix cm;
  cm.G = int(gts.size());
  cm.K = pred.K;
  size_t total = size_t(cm.G) * size_t(cm.K);
  cm.values.assign(total, 0.0);
  cm.cls.assign(total, 0.0);
  cm.text.assign(total, 0.0);
  cm.coord.assign(total, 0.0);
  cm.script.assign(total, 0.0);
  const int S = pred.script_count;
  if (S <= 0 || pred.script_logits.size() != size_t(pred.K) * size_t(S))
    throw std::runtime_error("script_aware_cost: missing script logits");
  // argmax script per query (ties to lowest index) and per-query log-softmax
  std::vector<int> pred_script(size_t(pred.K), 0);
  std::vector<double> log_soft(size_t(pred.K) * size_t(S), 0.0);
  for (int k = 0; k < pred.K; ++k) {
    const double* row = pred.script_logits.data() + size_t(k) * size_t(S);
    int arg = 0;
    double mx = row[0];
    for (int s = 1; s < S; ++s)
      if (row[s] > mx) {
        mx = row[s];
        arg = s;
      }
    pred_script[size_t(k)] = arg;
    double z = 0;
    for (int s = 0; s < S; ++s) z += std::exp(row[s] - mx);
    double logz = mx + std::log(z);
    for (int s = 0; s < S; ++s) log_soft[size_t(k) * size_t(S) + size_t(s)] = row[s] - logz;
  }
  for (int g = 0; g < cm.G; ++g) {
    const auto& gt = gts[size_t(g)];
    if (gt.script < 0 || gt.script >= int(pred.heads.size()))
      throw std::runtime_error("script_aware_cost: GT script id " + std::to_string(gt.script) +
                               " has no recognition head");
    const int C = pred.heads[size_t(gt.script)].classes;
    for (int k = 0; k < cm.K; ++k) {
      size_t idx = size_t(g) * size_t(cm.K) + size_t(k);
      cm.cls[idx] = w.cls * focal_cost_term(pred.inst_prob[size_t(k)], w.focal_alpha, w.focal_gamma);
      cm.coord[idx] = w.coord * l1_point_sum(gt.center, pred.centers[size_t(k)]);
      if (pred_script[size_t(k)] != gt.script) {
        cm.text[idx] = w.script_penalty;  // overwrites the text component
      } else {
        cm.text[idx] =
            w.text * ctc_nll_or_sentinel(pred.char_logits(gt.script, k), pred.N, C, gt.labels);
      }
      cm.script[idx] = w.script * -log_soft[size_t(k) * size_t(S) + size_t(gt.script)];
      cm.values[idx] = cm.cls[idx] + cm.coord[idx] + cm.text[idx] + cm.script[idx];
    }
  }
  return cm;
}

// Encoder-side proposal matching over the top-K set: focal score term plus
// mean (not summed) L1 over the N sampled points.
inline MatchAssignment encoder_matching(const std::vector<TextInstanceGT>& gts,
                                        const std::vector<Polyline>& proposal_points,
                                        const std::vector<double>& proposal_scores,
                                        const MatchWeights& w = {}) {
  const int G = int(gts.size());
  const int K = int(proposal_points.size());
  if (G == 0) return {};
  std::vector<std::vector<double>> cost(size_t(G), std::vector<double>(size_t(K), 0.0));
  for (int g = 0; g < G; ++g)
    for (int k = 0; k < K; ++k) {
      double n = double(proposal_points[size_t(k)].size());
      cost[size_t(g)][size_t(k)] =
          w.cls * focal_cost_term(proposal_scores[size_t(k)], w.focal_alpha, w.focal_gamma) +
          w.coord * l1_point_sum(gts[size_t(g)].center, proposal_points[size_t(k)]) / n;
    }
  return hungarian(cost);
}

}  // namespace textspot
