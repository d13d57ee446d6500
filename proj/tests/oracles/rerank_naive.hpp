#pragma once

// Slow, literal k-reciprocal re-ranking used only as a test oracle. It keeps
// sets as std::set, distances in a plain table and never shares code with the
// library kernels.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double cosine_distance(const Vec& a, const Vec& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return std::clamp(1.0 - ab / std::sqrt(aa * bb), 0.0, 2.0);
}

struct NaiveResult {
  std::size_t db_index;
  double distance;
};

// points[0] is the query; points[1..] are candidates with db_index[i].
// kNN(p, k) is p itself followed by its k closest other points.
inline std::vector<NaiveResult> naive_rerank(const std::vector<Vec>& points, const std::vector<std::size_t>& db_index, int k1,
                                             int k2, double alpha, std::size_t final_k) {
  const int n = static_cast<int>(points.size());
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) d[a][b] = a == b ? 0.0 : cosine_distance(points[a], points[b]);
  }
  // Node order for tie-breaking: query first, then by database index.
  auto tie_key = [&](int p) { return p == 0 ? -1.0 : static_cast<double>(db_index[p]); };
  auto knn = [&](int p, int k) {
    std::vector<int> others;
    for (int g = 0; g < n; ++g) {
      if (g != p) others.push_back(g);
    }
    std::sort(others.begin(), others.end(), [&](int a, int b) {
      if (d[p][a] != d[p][b]) return d[p][a] < d[p][b];
      return tie_key(a) < tie_key(b);
    });
    std::set<int> out = {p};
    for (int i = 0; i < std::min<int>(k, static_cast<int>(others.size())); ++i) out.insert(others[i]);
    return out;
  };
  auto recip = [&](int p, int k) {
    std::set<int> out;
    for (const int g : knn(p, k)) {
      if (knn(g, k).count(p)) out.insert(g);
    }
    return out;
  };

  const int half = (k1 + 1) / 2;
  std::vector<std::map<int, double>> encoding(n);
  for (int p = 0; p < n; ++p) {
    const std::set<int> base = recip(p, k1);
    std::set<int> expanded = base;
    for (const int g : base) {
      const std::set<int> small = recip(g, half);
      int common = 0;
      for (const int x : small) common += base.count(x) ? 1 : 0;
      if (static_cast<double>(common) >= (2.0 / 3.0) * static_cast<double>(small.size())) {
        expanded.insert(small.begin(), small.end());
      }
    }
    for (const int g : expanded) encoding[p][g] = std::exp(-d[p][g]);
  }

  std::vector<std::vector<double>> averaged(n, std::vector<double>(n, 0.0));
  for (int p = 0; p < n; ++p) {
    // k2 nearest including p itself.
    const std::set<int> nbrs_set = knn(p, k2 - 1);
    for (const int g : nbrs_set) {
      for (const auto& [t, w] : encoding[g]) averaged[p][t] += w;
    }
    for (double& v : averaged[p]) v /= static_cast<double>(nbrs_set.size());
  }

  struct Row {
    double final_d;
    double orig;
    std::size_t idx;
  };
  std::vector<Row> rows;
  for (int g = 1; g < n; ++g) {
    double mn = 0, mx = 0;
    for (int t = 0; t < n; ++t) {
      mn += std::min(averaged[0][t], averaged[g][t]);
      mx += std::max(averaged[0][t], averaged[g][t]);
    }
    const double jac = 1.0 - mn / mx;
    rows.push_back({(1.0 - alpha) * jac + alpha * d[0][g], d[0][g], db_index[g]});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.final_d != b.final_d) return a.final_d < b.final_d;
    if (a.orig != b.orig) return a.orig < b.orig;
    return a.idx < b.idx;
  });
  std::vector<NaiveResult> out;
  for (std::size_t i = 0; i < std::min(final_k, rows.size()); ++i) out.push_back({rows[i].idx, rows[i].final_d});
  return out;
}

}  // namespace oracle
