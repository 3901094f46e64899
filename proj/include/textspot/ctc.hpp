#pragma once
#include <cmath>
#include <limits>
#include <vector>

// CTC negative log-likelihood over blank-interleaved label paths, log-space
// forward DP plus the alpha/beta gradient. Class index 0 is the merged
// blank/background symbol. Shared by the matching costs (values only) and
// the training loss (values + gradient).

namespace textspot {

constexpr double kCtcSentinel = 1e4;  // finite stand-in for inadmissible targets
constexpr int kCtcBlank = 0;

inline int ctc_repeats(const std::vector<int>& labels) {
  int r = 0;
  for (size_t i = 0; i + 1 < labels.size(); ++i)
    if (labels[i] == labels[i + 1]) ++r;
  return r;
}

// A target fits into T frames iff T >= L + repeats.
inline bool ctc_admissible(int frames, const std::vector<int>& labels) {
  return !labels.empty() && frames >= int(labels.size()) + ctc_repeats(labels);
}

namespace detail {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double logsumexp2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double logsumexp3(double a, double b, double c) {
  return logsumexp2(logsumexp2(a, b), c);
}

}  // namespace detail

// -log p(labels | softmax(logits)) with logits row-major [T, C].
// Preconditions: admissible target, every label in [1, C).
inline double ctc_nll(const double* logits, int T, int C, const std::vector<int>& labels) {
  using detail::kNegInf;
  const int L = int(labels.size());
  const int S = 2 * L + 1;
  auto lab = [&](int s) { return (s & 1) ? labels[size_t(s / 2)] : kCtcBlank; };
  // per-frame log softmax
  std::vector<double> lp(size_t(T) * size_t(C), 0.0);
  for (int t = 0; t < T; ++t) {
    const double* row = logits + size_t(t) * size_t(C);
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0;
    for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    double logz = mx + std::log(z);
    for (int c = 0; c < C; ++c) lp[size_t(t) * size_t(C) + size_t(c)] = row[c] - logz;
  }
  std::vector<double> alpha(size_t(S), kNegInf), next(size_t(S), kNegInf);
  alpha[0] = lp[size_t(kCtcBlank)];
  if (S > 1) alpha[1] = lp[size_t(lab(1))];
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double best = alpha[size_t(s)];
      if (s >= 1) best = detail::logsumexp2(best, alpha[size_t(s - 1)]);
      if (s >= 2 && lab(s) != kCtcBlank && lab(s) != lab(s - 2))
        best = detail::logsumexp2(best, alpha[size_t(s - 2)]);
      next[size_t(s)] = best + lp[size_t(t) * size_t(C) + size_t(lab(s))];
    }
    alpha.swap(next);
  }
  double logp = alpha[size_t(S - 1)];
  if (S > 1) logp = detail::logsumexp2(logp, alpha[size_t(S - 2)]);
  return -logp;
}

// Loss plus d(loss)/d(logits), written (not accumulated) into grad_out[T*C].
inline double ctc_nll_grad(const double* logits, int T, int C, const std::vector<int>& labels,
                           double* grad_out) {
  using detail::kNegInf;
  const int L = int(labels.size());
  const int S = 2 * L + 1;
  auto lab = [&](int s) { return (s & 1) ? labels[size_t(s / 2)] : kCtcBlank; };
  std::vector<double> lp(size_t(T) * size_t(C), 0.0);
  std::vector<double> y(size_t(T) * size_t(C), 0.0);  // softmax probs
  for (int t = 0; t < T; ++t) {
    const double* row = logits + size_t(t) * size_t(C);
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0;
    for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    double logz = mx + std::log(z);
    for (int c = 0; c < C; ++c) {
      lp[size_t(t) * size_t(C) + size_t(c)] = row[c] - logz;
      y[size_t(t) * size_t(C) + size_t(c)] = std::exp(row[c] - logz);
    }
  }
  std::vector<double> alpha(size_t(T) * size_t(S), kNegInf);
  std::vector<double> beta(size_t(T) * size_t(S), kNegInf);
  auto A = [&](int t, int s) -> double& { return alpha[size_t(t) * size_t(S) + size_t(s)]; };
  auto B = [&](int t, int s) -> double& { return beta[size_t(t) * size_t(S) + size_t(s)]; };
  auto LP = [&](int t, int s) { return lp[size_t(t) * size_t(C) + size_t(lab(s))]; };
  A(0, 0) = LP(0, 0);
  if (S > 1) A(0, 1) = LP(0, 1);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      double best = A(t - 1, s);
      if (s >= 1) best = detail::logsumexp2(best, A(t - 1, s - 1));
      if (s >= 2 && lab(s) != kCtcBlank && lab(s) != lab(s - 2))
        best = detail::logsumexp2(best, A(t - 1, s - 2));
      A(t, s) = best + LP(t, s);
    }
  B(T - 1, S - 1) = 0.0;
  if (S > 1) B(T - 1, S - 2) = 0.0;
  for (int t = T - 2; t >= 0; --t)
    for (int s = 0; s < S; ++s) {
      double best = B(t + 1, s) + LP(t + 1, s);
      if (s + 1 < S) best = detail::logsumexp2(best, B(t + 1, s + 1) + LP(t + 1, s + 1));
      if (s + 2 < S && lab(s + 2) != kCtcBlank && lab(s + 2) != lab(s))
        best = detail::logsumexp2(best, B(t + 1, s + 2) + LP(t + 1, s + 2));
      B(t, s) = best;
    }
  double logp = A(T - 1, S - 1);
  if (S > 1) logp = detail::logsumexp2(logp, A(T - 1, S - 2));
  // d(-logp)/d(logit[t][c]) = y[t][c] - sum_{s: lab(s)=c} q_t(s)
  for (int t = 0; t < T; ++t) {
    std::vector<double> qsum(size_t(C), 0.0);
    for (int s = 0; s < S; ++s) {
      double a = A(t, s), b = B(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      qsum[size_t(lab(s))] += std::exp(a + b - logp);
    }
    for (int c = 0; c < C; ++c)
      grad_out[size_t(t) * size_t(C) + size_t(c)] = y[size_t(t) * size_t(C) + size_t(c)] - qsum[size_t(c)];
  }
  return -logp;
}

// Sentinel-guarded value for cost matrices: keeps every entry finite.
inline double ctc_nll_or_sentinel(const double* logits, int T, int C,
                                  const std::vector<int>& labels, bool* flagged = nullptr) {
  if (!ctc_admissible(T, labels)) {
    if (flagged) *flagged = true;
    return kCtcSentinel;
  }
  if (flagged) *flagged = false;
  return ctc_nll(logits, T, C, labels);
}

}  // namespace textspot
