#pragma once

// Exact top-N search and k-reciprocal re-ranking over the top-N candidates.
//
// Every dot product in this file goes through the same 4-lane kernel, so a
// pair's distance is bit-identical whether it is computed in the blocked
// search, by distance(), or inside re-ranking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "weakrank/embedding.hpp"
#include "weakrank/error.hpp"
#include "weakrank/io.hpp"
#include "weakrank/threads.hpp"

namespace weakrank {

enum class Metric { Cosine, Euclidean };

inline Metric parse_metric(std::string_view s) {
  if (s == "cosine") return Metric::Cosine;
  if (s == "euclidean") return Metric::Euclidean;
  fail(ErrorKind::InvalidArgument, "unknown metric `" + std::string(s) + "` (expected cosine or euclidean)");
}

inline std::string_view to_string(Metric m) { return m == Metric::Cosine ? "cosine" : "euclidean"; }

struct SearchParams {
  Metric metric = Metric::Cosine;
  std::size_t top_n = 100;
  std::size_t final_k = 10;
  std::size_t workers = 0;  // 0: WEAKRANK_THREADS or hardware concurrency
};

struct RerankParams {
  std::size_t k1 = 8;
  std::size_t k2 = 5;
  double alpha = 0.5;  // weight on the original distance

  void validate() const {
    if (k1 < 1 || k2 < 1) fail(ErrorKind::InvalidArgument, "k1 and k2 must be >= 1");
    if (k2 > k1) fail(ErrorKind::InvalidArgument, "k2 must be <= k1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::InvalidArgument, "alpha must be in [0, 1]");
  }
};

struct RankedEntry {
  std::string db_id;
  double distance = 0.0;
  std::size_t db_index = 0;

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

/// Candidates for one query, distances non-decreasing.
struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;

  friend bool operator==(const RankedList&, const RankedList&) = default;
};

namespace kernel {

using v4d = double __attribute__((vector_size(32)));
using v4f = float __attribute__((vector_size(16)));

inline std::size_t padded(std::size_t d) { return (d + 3) & ~std::size_t{3}; }

/// Row widened to double and zero-padded to a multiple of 4.
inline std::vector<double> widen(std::span<const float> x) {
  std::vector<double> out(padded(x.size()), 0.0);
  std::copy(x.begin(), x.end(), out.begin());
  return out;
}

inline v4d load_row4(const float* x, std::size_t j, std::size_t d) {
  if (j + 4 <= d) {
    v4f f;
    __builtin_memcpy(&f, x + j, sizeof(f));
    return __builtin_convertvector(f, v4d);
  }
  v4d out = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t l = 0; j + l < d; ++l) out[l] = x[j + l];
  return out;
}

inline v4d load_wide4(const double* q, std::size_t j) {
  v4d out;
  __builtin_memcpy(&out, q + j, sizeof(out));
  return out;
}

/// out[k] = <queries[k], x> for QB widened queries against one float row.
template <std::size_t QB>
inline void dots(const double* const* queries, const float* x, std::size_t d, double* out) {
  v4d acc[QB];
  for (std::size_t k = 0; k < QB; ++k) acc[k] = v4d{0.0, 0.0, 0.0, 0.0};
  for (std::size_t j = 0; j < d; j += 4) {
    const v4d xv = load_row4(x, j, d);
    for (std::size_t k = 0; k < QB; ++k) acc[k] += load_wide4(queries[k], j) * xv;
  }
  for (std::size_t k = 0; k < QB; ++k) out[k] = (acc[k][0] + acc[k][1]) + (acc[k][2] + acc[k][3]);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  const auto wa = widen(a);
  const double* q = wa.data();
  double out = 0.0;
  dots<1>(&q, b.data(), b.size(), &out);
  return out;
}

/// Distance from a dot product and the two squared norms.
inline double from_dot(double dot, double sq_a, double sq_b, Metric metric) {
  if (metric == Metric::Cosine) {
    const double d = 1.0 - dot / (std::sqrt(sq_a) * std::sqrt(sq_b));
    return std::clamp(d, 0.0, 2.0);
  }
  return std::sqrt(std::max(0.0, sq_a + sq_b - 2.0 * dot));
}

}  // namespace kernel

/// cosine: 1 - x.y / (|x||y|) clamped to [0, 2]; euclidean: |x - y|.
inline double distance(std::span<const float> x, std::span<const float> y, Metric metric) {
  if (x.size() != y.size()) fail(ErrorKind::DimensionMismatch, "vectors have different dimensions");
  const double sq_x = kernel::dot(x, x);
  const double sq_y = kernel::dot(y, y);
  if (metric == Metric::Cosine && (sq_x == 0.0 || sq_y == 0.0)) fail(ErrorKind::ZeroVector, "cosine distance of a zero vector");
  return kernel::from_dot(kernel::dot(x, y), sq_x, sq_y, metric);
}

namespace detail {

struct Candidate {
  double distance;
  std::size_t index;
  bool operator<(const Candidate& o) const { return distance != o.distance ? distance < o.distance : index < o.index; }
};

/// Keeps the `capacity` smallest candidates under (distance, index) order.
class TopN {
 public:
  explicit TopN(std::size_t capacity) : capacity_(capacity) { heap_.reserve(capacity + 1); }

  void offer(double distance, std::size_t index) {
    const Candidate c{distance, index};
    if (heap_.size() < capacity_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end());
    } else if (c < heap_.front()) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end());
    }
  }

  std::vector<Candidate> sorted() && {
    std::sort_heap(heap_.begin(), heap_.end());
    return std::move(heap_);
  }

 private:
  std::size_t capacity_;
  std::vector<Candidate> heap_;
};

inline std::vector<double> squared_norms(const EmbeddingMatrix& m) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = kernel::dot(m.row(i), m.row(i));
  return out;
}

}  // namespace detail

/// Exact top_n nearest database rows per query; ties go to the lower row.
/// Queries are split across workers and scanned against cache-sized database
/// tiles in groups of 8; each query's result is independent of the split.
inline std::vector<RankedList> top_n_search(const EmbeddingMatrix& queries, const EmbeddingMatrix& db,
                                            const SearchParams& params) {
  if (queries.dim() != db.dim()) {
    fail(ErrorKind::DimensionMismatch, "query dim " + std::to_string(queries.dim()) + " != database dim " + std::to_string(db.dim()));
  }
  if (params.top_n < 1) fail(ErrorKind::InvalidArgument, "top_n must be >= 1");
  if (params.top_n > db.rows()) {
    fail(ErrorKind::TopNTooLarge, "top_n " + std::to_string(params.top_n) + " exceeds database size " + std::to_string(db.rows()));
  }
  const std::size_t d = db.dim();
  const std::size_t dp = kernel::padded(d);
  const auto db_sq = detail::squared_norms(db);
  const auto q_sq = detail::squared_norms(queries);
  if (params.metric == Metric::Cosine) {
    for (std::size_t i = 0; i < db.rows(); ++i) {
      if (db_sq[i] == 0.0) fail(ErrorKind::ZeroVector, "database row `" + db.id(i) + "` is zero");
    }
    for (std::size_t i = 0; i < queries.rows(); ++i) {
      if (q_sq[i] == 0.0) fail(ErrorKind::ZeroVector, "query row `" + queries.id(i) + "` is zero");
    }
  }

  constexpr std::size_t kGroup = 8;
  const std::size_t tile_rows = std::max<std::size_t>(16, (256 * 1024) / (sizeof(float) * std::max<std::size_t>(d, 1)));
  std::vector<RankedList> results(queries.rows());
  parallel_for(queries.rows(), resolve_workers(params.workers), [&](std::size_t begin, std::size_t end) {
    std::vector<double> wide(kGroup * dp);
    std::vector<detail::TopN> heaps;
    for (std::size_t g0 = begin; g0 < end; g0 += kGroup) {
      const std::size_t g = std::min(kGroup, end - g0);
      const double* ptrs[kGroup];
      std::fill(wide.begin(), wide.end(), 0.0);
      heaps.clear();
      for (std::size_t k = 0; k < kGroup; ++k) {
        // Short groups repeat their last query; the duplicate results are dropped.
        const std::size_t qi = g0 + std::min(k, g - 1);
        const auto r = queries.row(qi);
        std::copy(r.begin(), r.end(), wide.begin() + static_cast<std::ptrdiff_t>(k * dp));
        ptrs[k] = wide.data() + k * dp;
        heaps.emplace_back(params.top_n);
      }
      double out[kGroup];
      for (std::size_t t0 = 0; t0 < db.rows(); t0 += tile_rows) {
        const std::size_t t1 = std::min(db.rows(), t0 + tile_rows);
        for (std::size_t j = t0; j < t1; ++j) {
          kernel::dots<kGroup>(ptrs, db.row(j).data(), d, out);
          for (std::size_t k = 0; k < g; ++k) {
            heaps[k].offer(kernel::from_dot(out[k], q_sq[g0 + k], db_sq[j], params.metric), j);
          }
        }
      }
      for (std::size_t k = 0; k < g; ++k) {
        RankedList list{queries.id(g0 + k), {}};
        for (const auto& c : std::move(heaps[k]).sorted()) list.entries.push_back({db.id(c.index), c.distance, c.index});
        results[g0 + k] = std::move(list);
      }
    }
  });
  return results;
}

/// First k entries of each list.
inline std::vector<RankedList> truncate(std::vector<RankedList> lists, std::size_t k) {
  for (auto& l : lists) {
    if (l.entries.size() > k) l.entries.resize(k);
  }
  return lists;
}

namespace detail {

/// Graph over {query} u candidates used by one re-ranking call. Node 0 is the
/// query; nodes 1..N are the candidates ordered by database row index.
struct CandidateGraph {
  std::size_t n = 0;
  std::vector<std::size_t> db_index;   // per node; unused for node 0
  std::vector<double> dist;            // n x n
  std::vector<std::size_t> order;      // n x n, row p = nodes by distance from p, p first
  std::vector<std::size_t> position;   // n x n, position[p*n+g] = rank of g in row p

  double d(std::size_t p, std::size_t g) const { return dist[p * n + g]; }
  std::size_t at(std::size_t p, std::size_t r) const { return order[p * n + r]; }
  bool in_knn(std::size_t p, std::size_t g, std::size_t k) const { return position[p * n + g] <= k; }
};

inline CandidateGraph build_graph(std::span<const float> query, const EmbeddingMatrix& db,
                                  std::vector<std::size_t> candidates, Metric metric) {
  std::sort(candidates.begin(), candidates.end());
  CandidateGraph g;
  g.n = candidates.size() + 1;
  g.db_index.assign(g.n, 0);
  std::vector<std::vector<double>> wide(g.n);
  std::vector<double> sq(g.n);
  std::vector<std::span<const float>> rows(g.n);
  rows[0] = query;
  for (std::size_t i = 1; i < g.n; ++i) {
    g.db_index[i] = candidates[i - 1];
    rows[i] = db.row(candidates[i - 1]);
  }
  for (std::size_t i = 0; i < g.n; ++i) {
    wide[i] = kernel::widen(rows[i]);
    const double* q = wide[i].data();
    kernel::dots<1>(&q, rows[i].data(), rows[i].size(), &sq[i]);
    if (metric == Metric::Cosine && sq[i] == 0.0) fail(ErrorKind::ZeroVector, "zero vector in re-ranking graph");
  }
  g.dist.assign(g.n * g.n, 0.0);
  for (std::size_t p = 0; p < g.n; ++p) {
    const double* q = wide[p].data();
    for (std::size_t c = p + 1; c < g.n; ++c) {
      double dot = 0.0;
      kernel::dots<1>(&q, rows[c].data(), rows[c].size(), &dot);
      const double v = kernel::from_dot(dot, sq[p], sq[c], metric);
      g.dist[p * g.n + c] = v;
      g.dist[c * g.n + p] = v;
    }
  }
  g.order.resize(g.n * g.n);
  g.position.resize(g.n * g.n);
  std::vector<std::size_t> row(g.n);
  for (std::size_t p = 0; p < g.n; ++p) {
    std::iota(row.begin(), row.end(), std::size_t{0});
    std::sort(row.begin(), row.end(), [&](std::size_t a, std::size_t b) {
      if (a == p || b == p) return a == p && b != p;
      const double da = g.d(p, a);
      const double db_ = g.d(p, b);
      return da != db_ ? da < db_ : a < b;
    });
    for (std::size_t r = 0; r < g.n; ++r) {
      g.order[p * g.n + r] = row[r];
      g.position[p * g.n + row[r]] = r;
    }
  }
  return g;
}

/// R(p, k): members of p's k-NN (self included) that also have p in their k-NN.
inline std::vector<std::size_t> reciprocal(const CandidateGraph& g, std::size_t p, std::size_t k) {
  std::vector<std::size_t> out;
  const std::size_t limit = std::min(k, g.n - 1);
  for (std::size_t r = 0; r <= limit; ++r) {
    const std::size_t c = g.at(p, r);
    if (g.in_knn(c, p, k)) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::size_t intersection_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t n = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++n, ++i, ++j;
    }
  }
  return n;
}

inline std::vector<RankedEntry> rerank_one(std::span<const float> query, const EmbeddingMatrix& db, const RankedList& initial,
                                           const RerankParams& params, std::size_t final_k, Metric metric) {
  std::vector<std::size_t> candidates;
  candidates.reserve(initial.entries.size());
  for (const auto& e : initial.entries) candidates.push_back(e.db_index);
  const CandidateGraph g = build_graph(query, db, std::move(candidates), metric);
  const std::size_t n = g.n;
  const std::size_t half = (params.k1 + 1) / 2;

  std::vector<std::vector<std::size_t>> r_full(n);
  std::vector<std::vector<std::size_t>> r_half(n);
  for (std::size_t p = 0; p < n; ++p) {
    r_full[p] = reciprocal(g, p, params.k1);
    r_half[p] = reciprocal(g, p, half);
  }

  // Encodings: exp(-d) on the expanded reciprocal set, dense over nodes.
  std::vector<double> enc(n * n, 0.0);
  std::vector<char> member(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::fill(member.begin(), member.end(), 0);
    for (const std::size_t c : r_full[p]) member[c] = 1;
    for (const std::size_t c : r_full[p]) {
      const auto& extra = r_half[c];
      if (3 * intersection_size(extra, r_full[p]) >= 2 * extra.size()) {
        for (const std::size_t e : extra) member[e] = 1;
      }
    }
    for (std::size_t c = 0; c < n; ++c) {
      if (member[c]) enc[p * n + c] = std::exp(-g.d(p, c));
    }
  }

  // Local query expansion over each node's k2 nearest (self included).
  const std::size_t k2 = std::min(params.k2, n);
  std::vector<double> expanded(n * n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    double* dst = expanded.data() + p * n;
    for (std::size_t r = 0; r < k2; ++r) {
      const double* src = enc.data() + g.at(p, r) * n;
      for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
    }
    for (std::size_t c = 0; c < n; ++c) dst[c] /= static_cast<double>(k2);
  }

  struct Scored {
    double final_distance;
    double original;
    std::size_t db_index;
  };
  std::vector<Scored> scored;
  scored.reserve(n - 1);
  const double* vq = expanded.data();
  for (std::size_t c = 1; c < n; ++c) {
    const double* vc = expanded.data() + c * n;
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      lo += std::min(vq[t], vc[t]);
      hi += std::max(vq[t], vc[t]);
    }
    const double jaccard = 1.0 - lo / hi;
    const double original = g.d(0, c);
    scored.push_back({(1.0 - params.alpha) * jaccard + params.alpha * original, original, g.db_index[c]});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.final_distance != b.final_distance) return a.final_distance < b.final_distance;
    if (a.original != b.original) return a.original < b.original;
    return a.db_index < b.db_index;
  });
  std::vector<RankedEntry> out;
  for (std::size_t i = 0; i < std::min(final_k, scored.size()); ++i) {
    out.push_back({db.id(scored[i].db_index), scored[i].final_distance, scored[i].db_index});
  }
  return out;
}

}  // namespace detail

/// k-reciprocal re-ranking restricted to each query's own candidate list.
/// The query takes part in neighbourhoods but is never returned. Final
/// distance is (1 - alpha) * jaccard + alpha * original; ties fall back to
/// the original distance, then database row.
inline std::vector<RankedList> k_reciprocal_rerank(const EmbeddingMatrix& queries, const EmbeddingMatrix& db,
                                                   const std::vector<RankedList>& initial, const RerankParams& params,
                                                   std::size_t final_k, Metric metric = Metric::Cosine,
                                                   std::size_t workers = 0) {
  params.validate();
  if (final_k < 1) fail(ErrorKind::InvalidArgument, "final_k must be >= 1");
  if (initial.size() != queries.rows()) fail(ErrorKind::ShapeMismatch, "one initial list per query is required");
  if (queries.dim() != db.dim()) fail(ErrorKind::DimensionMismatch, "query and database dims differ");
  const std::size_t needed = std::max(params.k1 + 1, final_k);
  for (std::size_t i = 0; i < initial.size(); ++i) {
    if (initial[i].query_id != queries.id(i)) fail(ErrorKind::IdMismatch, "initial list " + std::to_string(i) + " is for a different query");
    if (initial[i].entries.size() < needed) {
      fail(ErrorKind::InsufficientCandidates, "query `" + queries.id(i) + "` has " + std::to_string(initial[i].entries.size()) +
                                                  " candidates, re-ranking needs " + std::to_string(needed));
    }
  }
  std::vector<RankedList> out(initial.size());
  parallel_for(initial.size(), resolve_workers(workers), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out[i] = {initial[i].query_id, detail::rerank_one(queries.row(i), db, initial[i], params, final_k, metric)};
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Ranked TSV: query_id<TAB>db_id<TAB>rank<TAB>distance, ranks 1-based.

inline std::string format_ranked(const std::vector<RankedList>& lists) {
  std::string out;
  for (const auto& l : lists) {
    for (std::size_t r = 0; r < l.entries.size(); ++r) {
      out += l.query_id + "\t" + l.entries[r].db_id + "\t" + std::to_string(r + 1) + "\t" +
             io::format_double(l.entries[r].distance) + "\n";
    }
  }
  return out;
}

/// Parses ranked TSV. Rows for one query must be contiguous with ranks
/// 1, 2, ...; db_index is left 0 since the file does not carry it.
inline std::vector<RankedList> parse_ranked(std::string_view text, std::string_view origin = "ranked") {
  std::vector<RankedList> out;
  const auto all = io::lines(text);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].empty()) continue;
    const auto where = std::string(origin) + ":" + std::to_string(i + 1);
    const auto fields = io::split(all[i], '\t');
    if (fields.size() != 4) fail(ErrorKind::CorruptFile, where + ": expected 4 tab-separated fields");
    std::size_t rank = 0;
    double dist = 0.0;
    const auto rank_res = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), rank);
    const auto dist_res = std::from_chars(fields[3].data(), fields[3].data() + fields[3].size(), dist);
    if (rank_res.ec != std::errc{} || dist_res.ec != std::errc{}) fail(ErrorKind::CorruptFile, where + ": bad rank or distance");
    const std::string qid(fields[0]);
    if (out.empty() || out.back().query_id != qid) {
      for (const auto& l : out) {
        if (l.query_id == qid) fail(ErrorKind::CorruptFile, where + ": rows for `" + qid + "` are not contiguous");
      }
      out.push_back({qid, {}});
    }
    if (rank != out.back().entries.size() + 1) fail(ErrorKind::CorruptFile, where + ": ranks must be consecutive from 1");
    out.back().entries.push_back({std::string(fields[1]), dist, 0});
  }
  return out;
}

inline void save_ranked(const std::string& path, const std::vector<RankedList>& lists) { io::write_file(path, format_ranked(lists)); }
inline std::vector<RankedList> load_ranked(const std::string& path) { return parse_ranked(io::read_file(path), path); }

}  // namespace weakrank
