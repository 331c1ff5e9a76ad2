#pragma once

// Independent reference implementations used to freeze expected values.
// Everything here is deliberately naive and kept apart from the library
// code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

namespace oracles {

// plain triple loop at long double precision
inline std::vector<double> naive_matmul(const std::vector<double>& a, int m, int k,
                                        const std::vector<double>& b, int n) {
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      long double acc = 0;
      for (int t = 0; t < k; ++t)
        acc += static_cast<long double>(a[i * k + t]) * b[t * n + j];
      out[i * n + j] = static_cast<double>(acc);
    }
  return out;
}

// central finite differences of a scalar function of a flat vector
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double step) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + step;
    double fp = f(x);
    x[i] = keep - step;
    double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double denom = std::max(1.0, std::max(std::fabs(a[i]), std::fabs(b[i])));
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

// DCG of a fixed ordering, gain rel/log2(pos+1)
inline double dcg_of_order(const std::vector<int>& order, const std::vector<double>& rel, int k) {
  double s = 0;
  int top = std::min<int>(k, static_cast<int>(order.size()));
  for (int pos = 0; pos < top; ++pos)
    s += rel[order[pos]] / std::log2(static_cast<double>(pos) + 2.0);
  return s;
}

// nDCG@k by exhaustive permutation: DCG of the score-induced order over the
// max DCG over every permutation. Only feasible for short lists.
inline double ndcg_exhaustive(const std::vector<double>& scores, const std::vector<double>& rel,
                              int k) {
  int n = static_cast<int>(scores.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  double dcg = dcg_of_order(order, rel, k);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0;
  do {
    best = std::max(best, dcg_of_order(perm, rel, k));
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (best == 0) return 1.0;
  return dcg / best;
}

// probability a random positive outscores a random negative, ties 1/2
inline double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  double num = 0;
  long long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        num += 1.0;
      else if (scores[i] == scores[j])
        num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

}  // namespace oracles
