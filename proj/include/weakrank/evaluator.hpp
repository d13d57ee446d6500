#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "weakrank/error.hpp"
#include "weakrank/io.hpp"
#include "weakrank/retrieval.hpp"

namespace weakrank {

/// Recall denominator: min(|relevant|, k) keeps a perfect score reachable
/// when a query has more than k matches; Full divides by |relevant|.
enum class Denominator { MinRelevantK, Full };

inline Denominator parse_denominator(std::string_view s) {
  if (s == "min") return Denominator::MinRelevantK;
  if (s == "full") return Denominator::Full;
  fail(ErrorKind::InvalidArgument, "unknown recall denominator `" + std::string(s) + "` (expected min or full)");
}

struct GroundTruthEntry {
  std::string query_id;
  std::vector<std::string> relevant;
};

/// query id -> relevant database ids, in file order.
class GroundTruth {
 public:
  GroundTruth() = default;

  explicit GroundTruth(std::vector<GroundTruthEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.relevant.empty()) fail(ErrorKind::EmptyRelevantSet, "query `" + e.query_id + "` has no relevant items");
      if (!index_.emplace(e.query_id, i).second) fail(ErrorKind::DuplicateId, "query `" + e.query_id + "` listed twice");
    }
  }

  const std::vector<GroundTruthEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  const std::vector<std::string>* find(const std::string& query_id) const {
    const auto it = index_.find(query_id);
    return it == index_.end() ? nullptr : &entries_[it->second].relevant;
  }

 private:
  std::vector<GroundTruthEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

inline std::string format_ground_truth(const GroundTruth& gt) {
  std::string out;
  for (const auto& e : gt.entries()) {
    out += e.query_id + "\t";
    for (std::size_t j = 0; j < e.relevant.size(); ++j) {
      if (j) out += ',';
      out += e.relevant[j];
    }
    out += '\n';
  }
  return out;
}

inline GroundTruth parse_ground_truth(std::string_view text, std::string_view origin = "ground truth") {
  std::vector<GroundTruthEntry> entries;
  const auto all = io::lines(text);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].empty()) continue;
    const std::size_t tab = all[i].find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      fail(ErrorKind::CorruptFile, std::string(origin) + ":" + std::to_string(i + 1) + ": expected `query_id<TAB>db_ids`");
    }
    GroundTruthEntry e{std::string(all[i].substr(0, tab)), {}};
    for (const auto id : io::split(all[i].substr(tab + 1), ',')) {
      if (id.empty()) fail(ErrorKind::CorruptFile, std::string(origin) + ":" + std::to_string(i + 1) + ": empty db id");
      e.relevant.emplace_back(id);
    }
    entries.push_back(std::move(e));
  }
  return GroundTruth(std::move(entries));
}

inline void save_ground_truth(const std::string& path, const GroundTruth& gt) { io::write_file(path, format_ground_truth(gt)); }
inline GroundTruth load_ground_truth(const std::string& path) { return parse_ground_truth(io::read_file(path), path); }

/// |top-k ∩ relevant| / min(|relevant|, k)  (or / |relevant| with Full).
inline double recall_at_k(const RankedList& ranked, const std::vector<std::string>& relevant, std::size_t k,
                          Denominator denominator = Denominator::MinRelevantK) {
  if (k < 1) fail(ErrorKind::InvalidArgument, "k must be >= 1");
  if (relevant.empty()) fail(ErrorKind::EmptyRelevantSet, "query `" + ranked.query_id + "` has no relevant items");
  const std::unordered_set<std::string> wanted(relevant.begin(), relevant.end());
  std::unordered_set<std::string> seen;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked.entries.size(); ++r) {
    const auto& id = ranked.entries[r].db_id;
    if (!seen.insert(id).second) {
      fail(ErrorKind::DuplicateId, "ranked list for `" + ranked.query_id + "` repeats `" + id + "`");
    }
    if (r < k && wanted.count(id)) ++hits;
  }
  const std::size_t denom = denominator == Denominator::Full ? wanted.size() : std::min(wanted.size(), k);
  return static_cast<double>(hits) / static_cast<double>(denom);
}

struct QueryRecall {
  std::string id;
  double recall = 0.0;
};

struct EvalReport {
  std::size_t k = 10;
  std::vector<QueryRecall> per_query;
  double mar = 0.0;

  std::string to_json() const {
    nlohmann::ordered_json doc;
    doc["k"] = k;
    doc["mar"] = mar;
    doc["num_queries"] = per_query.size();
    auto& rows = doc["per_query"] = nlohmann::ordered_json::array();
    for (const auto& q : per_query) rows.push_back({{"id", q.id}, {"recall", q.recall}});
    return doc.dump(1) + "\n";
  }
};

/// Mean of per-query recall@k. Every ranked query must have ground truth.
inline EvalReport mar_at_k(const std::vector<RankedList>& ranked, const GroundTruth& gt, std::size_t k,
                           Denominator denominator = Denominator::MinRelevantK) {
  EvalReport report;
  report.k = k;
  double total = 0.0;
  std::unordered_set<std::string> queries;
  for (const auto& list : ranked) {
    const auto* relevant = gt.find(list.query_id);
    if (relevant == nullptr) fail(ErrorKind::MissingGroundTruth, "no ground truth for query `" + list.query_id + "`");
    if (!queries.insert(list.query_id).second) fail(ErrorKind::DuplicateId, "query `" + list.query_id + "` ranked twice");
    const double r = recall_at_k(list, *relevant, k, denominator);
    report.per_query.push_back({list.query_id, r});
    total += r;
  }
  report.mar = ranked.empty() ? 0.0 : total / static_cast<double>(ranked.size());
  return report;
}

}  // namespace weakrank
