#pragma once

// Pseudo-attribute mining: frequent whitespace-delimited title tokens become
// the label space of the multi-label objective, and each item's set of
// surviving tokens becomes its soft target (mass 1/K on each of K attributes).

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "weakrank/error.hpp"
#include "weakrank/io.hpp"
#include "weakrank/threads.hpp"

namespace weakrank {

using AttrId = std::uint32_t;

struct MinerOptions {
  bool lowercase = true;
  /// false: a token counts once per occurrence; true: once per title.
  bool count_titles = false;
};

namespace detail {

/// Byte length of the Unicode whitespace sequence starting at s[i], 0 if none.
inline std::size_t whitespace_len(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) { return static_cast<unsigned char>(s[i + k]); };
  const std::size_t left = s.size() - i;
  const unsigned char c = b(0);
  if (c == ' ' || (c >= 0x09 && c <= 0x0D)) return 1;
  if (c == 0xC2 && left >= 2 && (b(1) == 0x85 || b(1) == 0xA0)) return 2;  // NEL, NBSP
  if (c == 0xE1 && left >= 3 && b(1) == 0x9A && b(2) == 0x80) return 3;   // U+1680
  if (c == 0xE2 && left >= 3) {
    if (b(1) == 0x80 && (b(2) <= 0x8A || b(2) == 0xA8 || b(2) == 0xA9 || b(2) == 0xAF)) return 3;
    if (b(1) == 0x81 && b(2) == 0x9F) return 3;  // U+205F
  }
  if (c == 0xE3 && left >= 3 && b(1) == 0x80 && b(2) == 0x80) return 3;  // U+3000
  return 0;
}

}  // namespace detail

/// Splits on runs of Unicode whitespace, optionally lowercasing (ASCII).
/// Empty tokens are dropped; order and duplicates are kept.
inline std::vector<std::string> tokenize(std::string_view title, bool lowercase = true) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < title.size()) {
    if (const std::size_t ws = detail::whitespace_len(title, i); ws != 0) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      i += ws;
      continue;
    }
    char c = title[i];
    if (lowercase && c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    current.push_back(c);
    ++i;
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

struct VocabEntry {
  std::string token;
  std::uint64_t count = 0;
  AttrId id = 0;

  friend bool operator==(const VocabEntry&, const VocabEntry&) = default;
};

/// Immutable mined vocabulary. Entries are ordered by descending count then
/// ascending token, and ids are the positions in that order.
class AttributeVocab {
 public:
  AttributeVocab() = default;

  /// Validates ordering, contiguous ids and the count threshold.
  AttributeVocab(std::vector<VocabEntry> entries, std::uint64_t min_count)
      : entries_(std::move(entries)), min_count_(min_count) {
    index_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.id != i) fail(ErrorKind::InvalidArgument, "vocab ids must be contiguous from 0");
      if (e.count <= min_count_) fail(ErrorKind::InvalidArgument, "vocab entry `" + e.token + "` is below threshold");
      if (e.token.empty()) fail(ErrorKind::InvalidArgument, "vocab entry with empty token");
      if (i > 0) {
        const auto& prev = entries_[i - 1];
        const bool ordered = prev.count > e.count || (prev.count == e.count && prev.token < e.token);
        if (!ordered) fail(ErrorKind::InvalidArgument, "vocab entries out of order at `" + e.token + "`");
      }
      if (!index_.emplace(e.token, e.id).second) fail(ErrorKind::DuplicateId, "duplicate vocab token `" + e.token + "`");
    }
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::uint64_t min_count() const noexcept { return min_count_; }
  const std::vector<VocabEntry>& entries() const noexcept { return entries_; }

  std::optional<AttrId> find(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::string to_json() const {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& e : entries_) {
      out.push_back({{"token", e.token}, {"count", e.count}, {"id", e.id}});
    }
    return out.dump(1) + "\n";
  }

  /// The JSON form does not record the threshold; min_count() is 0 after loading.
  static AttributeVocab from_json(std::string_view text) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::CorruptFile, std::string("vocab JSON: ") + e.what());
    }
    if (!doc.is_array()) fail(ErrorKind::CorruptFile, "vocab JSON must be an array");
    std::vector<VocabEntry> entries;
    entries.reserve(doc.size());
    try {
      for (const auto& item : doc) {
        entries.push_back({item.at("token").get<std::string>(), item.at("count").get<std::uint64_t>(),
                           item.at("id").get<AttrId>()});
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::CorruptFile, std::string("vocab JSON entry: ") + e.what());
    }
    if (entries.empty()) fail(ErrorKind::EmptyVocab, "vocab file has no entries");
    try {
      return AttributeVocab(std::move(entries), 0);
    } catch (const Error& e) {
      fail(ErrorKind::CorruptFile, std::string("vocab JSON: ") + e.what());
    }
  }

  void save(const std::string& path) const { io::write_file(path, to_json()); }
  static AttributeVocab load(const std::string& path) { return from_json(io::read_file(path)); }

 private:
  std::vector<VocabEntry> entries_;
  std::uint64_t min_count_ = 0;
  std::unordered_map<std::string, AttrId> index_;
};

/// Counts tokens and keeps those seen strictly more than min_count times.
/// Counting is split across workers and merged; the result does not depend
/// on the worker count because the final order is a total order.
inline AttributeVocab build_vocab(std::span<const std::string> titles, std::uint64_t min_count,
                                  const MinerOptions& options = {}, std::size_t workers = 1) {
  if (min_count < 1) fail(ErrorKind::InvalidArgument, "min_count must be >= 1");
  using Counts = std::unordered_map<std::string, std::uint64_t>;
  workers = std::max<std::size_t>(1, std::min(workers, titles.size()));
  std::vector<Counts> partial(workers);
  const std::size_t chunk = titles.empty() ? 0 : (titles.size() + workers - 1) / workers;
  parallel_for(workers, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t w = begin; w < end; ++w) {
      auto& counts = partial[w];
      const std::size_t lo = w * chunk;
      const std::size_t hi = std::min(titles.size(), lo + chunk);
      for (std::size_t i = lo; i < hi; ++i) {
        auto tokens = tokenize(titles[i], options.lowercase);
        if (options.count_titles) {
          std::sort(tokens.begin(), tokens.end());
          tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
        }
        for (auto& t : tokens) ++counts[std::move(t)];
      }
    }
  });
  Counts total;
  for (auto& counts : partial) {
    for (auto& [token, n] : counts) total[token] += n;
  }
  std::vector<VocabEntry> entries;
  for (auto& [token, n] : total) {
    if (n > min_count) entries.push_back({token, n, 0});
  }
  if (entries.empty()) {
    fail(ErrorKind::EmptyVocab, "no token appears more than " + std::to_string(min_count) + " times");
  }
  std::sort(entries.begin(), entries.end(), [](const VocabEntry& a, const VocabEntry& b) {
    return a.count != b.count ? a.count > b.count : a.token < b.token;
  });
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].id = static_cast<AttrId>(i);
  return AttributeVocab(std::move(entries), min_count);
}

/// An item's pseudo-attributes: unique vocab ids, strictly increasing.
struct ItemAttributes {
  std::string item_id;
  std::vector<AttrId> attr_ids;

  std::size_t k() const noexcept { return attr_ids.size(); }
  friend bool operator==(const ItemAttributes&, const ItemAttributes&) = default;
};

/// Returns nullopt when no title token is in the vocabulary; callers drop
/// those items from training.
inline std::optional<ItemAttributes> encode_item(std::string item_id, std::string_view title,
                                                 const AttributeVocab& vocab, bool lowercase = true) {
  ItemAttributes item{std::move(item_id), {}};
  for (const auto& token : tokenize(title, lowercase)) {
    if (const auto id = vocab.find(token)) item.attr_ids.push_back(*id);
  }
  if (item.attr_ids.empty()) return std::nullopt;
  std::sort(item.attr_ids.begin(), item.attr_ids.end());
  item.attr_ids.erase(std::unique(item.attr_ids.begin(), item.attr_ids.end()), item.attr_ids.end());
  return item;
}

/// Sparse soft multi-label targets; row i puts 1/k_i on each of its ids.
class SoftTargets {
 public:
  SoftTargets() = default;

  SoftTargets(std::vector<ItemAttributes> rows, std::size_t num_classes)
      : rows_(std::move(rows)), num_classes_(num_classes) {
    for (const auto& row : rows_) {
      if (row.attr_ids.empty()) fail(ErrorKind::InvalidArgument, "item `" + row.item_id + "` has no attributes");
      for (std::size_t j = 0; j < row.attr_ids.size(); ++j) {
        if (row.attr_ids[j] >= num_classes_) {
          fail(ErrorKind::InvalidAttributeId, "item `" + row.item_id + "` has attribute id " +
                                                  std::to_string(row.attr_ids[j]) + " >= " +
                                                  std::to_string(num_classes_));
        }
        if (j > 0 && row.attr_ids[j] <= row.attr_ids[j - 1]) {
          fail(ErrorKind::InvalidArgument, "item `" + row.item_id + "` attribute ids must be strictly increasing");
        }
      }
    }
  }

  std::size_t num_samples() const noexcept { return rows_.size(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<ItemAttributes>& rows() const noexcept { return rows_; }
  const ItemAttributes& row(std::size_t i) const { return rows_[i]; }

  std::vector<double> dense_row(std::size_t i) const {
    std::vector<double> out(num_classes_, 0.0);
    const auto& ids = rows_[i].attr_ids;
    const double mass = 1.0 / static_cast<double>(ids.size());
    for (const AttrId id : ids) out[id] = mass;
    return out;
  }

  /// Targets for a subset of rows, in the given order.
  SoftTargets select(std::span<const std::size_t> indices) const {
    SoftTargets out;
    out.num_classes_ = num_classes_;
    out.rows_.reserve(indices.size());
    for (const std::size_t i : indices) out.rows_.push_back(rows_[i]);
    return out;
  }

 private:
  std::vector<ItemAttributes> rows_;
  std::size_t num_classes_ = 0;
};

inline SoftTargets build_soft_targets(std::vector<ItemAttributes> items, const AttributeVocab& vocab) {
  return SoftTargets(std::move(items), vocab.size());
}

inline std::vector<std::pair<std::string, std::uint64_t>> histogram(const AttributeVocab& vocab, std::size_t top_n) {
  if (top_n < 1) fail(ErrorKind::InvalidArgument, "top_n must be >= 1");
  std::vector<std::pair<std::string, std::uint64_t>> out;
  const std::size_t n = std::min(top_n, vocab.size());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(vocab.entries()[i].token, vocab.entries()[i].count);
  return out;
}

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// CSV with header `rank,token,count`; ranks are 1-based.
inline std::string histogram_csv(const std::vector<std::pair<std::string, std::uint64_t>>& rows) {
  std::string out = "rank,token,count\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += std::to_string(i + 1) + "," + detail::csv_field(rows[i].first) + "," + std::to_string(rows[i].second) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats

struct CorpusRecord {
  std::string item_id;
  std::string title;
};

/// `item_id<TAB>title` per line. Blank lines are skipped.
inline std::vector<CorpusRecord> parse_corpus(std::string_view text, std::string_view origin = "corpus") {
  std::vector<CorpusRecord> out;
  const auto all = io::lines(text);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto line = all[i];
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      fail(ErrorKind::CorruptFile, std::string(origin) + ":" + std::to_string(i + 1) + ": expected `item_id<TAB>title`");
    }
    out.push_back({std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))});
  }
  return out;
}

inline std::vector<CorpusRecord> load_corpus(const std::string& path) { return parse_corpus(io::read_file(path), path); }

inline std::string format_corpus(std::span<const CorpusRecord> records) {
  std::string out;
  for (const auto& r : records) out += r.item_id + "\t" + r.title + "\n";
  return out;
}

/// `id<TAB>comma-separated integer ids` per line; shared by the targets and
/// ground-truth style files.
inline std::string format_id_lists(std::span<const ItemAttributes> items) {
  std::string out;
  for (const auto& item : items) {
    out += item.item_id;
    out += '\t';
    for (std::size_t j = 0; j < item.attr_ids.size(); ++j) {
      if (j) out += ',';
      out += std::to_string(item.attr_ids[j]);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<ItemAttributes> parse_targets(std::string_view text, std::string_view origin = "targets") {
  std::vector<ItemAttributes> out;
  const auto all = io::lines(text);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto line = all[i];
    if (line.empty()) continue;
    const auto where = std::string(origin) + ":" + std::to_string(i + 1);
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0) fail(ErrorKind::CorruptFile, where + ": expected `item_id<TAB>ids`");
    ItemAttributes item{std::string(line.substr(0, tab)), {}};
    for (const auto field : io::split(line.substr(tab + 1), ',')) {
      AttrId id = 0;
      const auto res = std::from_chars(field.data(), field.data() + field.size(), id);
      if (field.empty() || res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
        fail(ErrorKind::CorruptFile, where + ": bad attribute id `" + std::string(field) + "`");
      }
      item.attr_ids.push_back(id);
    }
    for (std::size_t j = 1; j < item.attr_ids.size(); ++j) {
      if (item.attr_ids[j] <= item.attr_ids[j - 1]) fail(ErrorKind::CorruptFile, where + ": ids must be strictly increasing");
    }
    out.push_back(std::move(item));
  }
  return out;
}

inline void save_targets(const std::string& path, std::span<const ItemAttributes> items) {
  io::write_file(path, format_id_lists(items));
}

inline std::vector<ItemAttributes> load_targets(const std::string& path) { return parse_targets(io::read_file(path), path); }

struct EncodedCorpus {
  std::vector<ItemAttributes> items;
  std::size_t dropped = 0;  // items whose titles had no vocabulary token
};

inline EncodedCorpus encode_corpus(std::span<const CorpusRecord> corpus, const AttributeVocab& vocab,
                                   bool lowercase = true) {
  EncodedCorpus out;
  for (const auto& r : corpus) {
    if (auto item = encode_item(r.item_id, r.title, vocab, lowercase)) {
      out.items.push_back(std::move(*item));
    } else {
      ++out.dropped;
    }
  }
  return out;
}

}  // namespace weakrank
