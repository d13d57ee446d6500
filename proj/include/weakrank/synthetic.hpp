#pragma once

// Seeded synthetic instance-retrieval benchmark.
//
// Coarse classes hold many instances; each instance has a small set of
// title tokens drawn from a Zipf-like law, and its feature offset from the
// class centroid is a linear function of those tokens confined to a
// low-rank subspace. Views add isotropic Gaussian noise. Coarse labels
// therefore cannot separate instances, while titles can.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "weakrank/attribute_miner.hpp"
#include "weakrank/config.hpp"
#include "weakrank/embedding.hpp"
#include "weakrank/error.hpp"
#include "weakrank/evaluator.hpp"
#include "weakrank/rng.hpp"

namespace weakrank {

struct SynthConfig {
  std::size_t num_coarse_classes = 10;
  std::size_t instances_per_class = 50;
  std::size_t views_per_instance = 3;
  std::size_t feature_dim = 64;
  std::size_t vocab_size = 200;
  std::size_t attrs_per_instance = 5;
  double class_signal = 1.0;
  double instance_signal = 1.0;
  double noise_sigma = 0.6;
  std::size_t signal_rank = 16;  // dimension of the attribute subspace
  double zipf_exponent = 1.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_coarse_classes == 0 || instances_per_class == 0 || feature_dim == 0 || vocab_size == 0 || attrs_per_instance == 0) {
      fail(ErrorKind::InvalidConfig, "synthetic sizes must be >= 1");
    }
    if (views_per_instance < 2) fail(ErrorKind::InvalidConfig, "views_per_instance must be >= 2");
    if (attrs_per_instance > vocab_size) fail(ErrorKind::InvalidConfig, "attrs_per_instance must be <= vocab_size");
    if (signal_rank == 0 || signal_rank > feature_dim) fail(ErrorKind::InvalidConfig, "signal_rank must be in [1, feature_dim]");
    if (!(class_signal >= 0.0 && instance_signal >= 0.0 && noise_sigma >= 0.0 && zipf_exponent >= 0.0)) {
      fail(ErrorKind::InvalidConfig, "signals, noise and zipf exponent must be >= 0");
    }
  }
};

inline SynthConfig synth_config_from(const Config& cfg, const std::string& prefix = "", SynthConfig base = {}) {
  const auto key = [&](const char* k) { return prefix + k; };
  const auto size = [&](const char* k, std::size_t v) {
    const auto out = cfg.get_int(key(k), static_cast<std::int64_t>(v));
    if (out < 0) fail(ErrorKind::InvalidConfig, "key `" + key(k) + "` must be >= 0");
    return static_cast<std::size_t>(out);
  };
  base.num_coarse_classes = size("num_coarse_classes", base.num_coarse_classes);
  base.instances_per_class = size("instances_per_class", base.instances_per_class);
  base.views_per_instance = size("views_per_instance", base.views_per_instance);
  base.feature_dim = size("feature_dim", base.feature_dim);
  base.vocab_size = size("vocab_size", base.vocab_size);
  base.attrs_per_instance = size("attrs_per_instance", base.attrs_per_instance);
  base.class_signal = cfg.get_double(key("class_signal"), base.class_signal);
  base.instance_signal = cfg.get_double(key("instance_signal"), base.instance_signal);
  base.noise_sigma = cfg.get_double(key("noise_sigma"), base.noise_sigma);
  base.signal_rank = size("signal_rank", base.signal_rank);
  base.zipf_exponent = cfg.get_double(key("zipf_exponent"), base.zipf_exponent);
  base.seed = static_cast<std::uint64_t>(cfg.get_int(key("seed"), static_cast<std::int64_t>(base.seed)));
  return base;
}

struct SynthDataset {
  EmbeddingMatrix features;              // all views
  std::vector<std::size_t> coarse_labels;  // per view
  std::vector<std::size_t> instance_of;    // per view, global instance index
  std::vector<std::string> titles;         // per view
  std::vector<std::vector<std::size_t>> instance_tokens;  // generating token indices, sorted
  std::vector<std::size_t> query_rows;     // view 0 of each instance
  std::vector<std::size_t> db_rows;        // remaining views
  GroundTruth ground_truth;                // query id -> sibling db ids

  EmbeddingMatrix queries() const { return features.subset(query_rows); }
  EmbeddingMatrix database() const { return features.subset(db_rows); }
};

inline std::string synth_token(std::size_t index) {
  std::string digits = std::to_string(index);
  while (digits.size() < 3) digits.insert(digits.begin(), '0');
  return "attr" + digits;
}

inline std::string synth_view_id(std::size_t cls, std::size_t inst, std::size_t view) {
  return "c" + std::to_string(cls) + "_i" + std::to_string(inst) + "_v" + std::to_string(view);
}

namespace detail {

/// Draws `count` distinct indices with probability proportional to weight,
/// sequentially without replacement.
inline std::vector<std::size_t> weighted_distinct(Rng& rng, const std::vector<double>& weights, std::size_t count) {
  std::vector<char> taken(weights.size(), 0);
  std::vector<std::size_t> out;
  double remaining = 0.0;
  for (const double w : weights) remaining += w;
  while (out.size() < count) {
    double u = rng.uniform() * remaining;
    std::size_t pick = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (taken[i]) continue;
      pick = i;
      if (u < weights[i]) break;
      u -= weights[i];
    }
    taken[pick] = 1;
    remaining -= weights[pick];
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// d x r matrix with orthonormal columns (Gram-Schmidt on Gaussian draws).
inline std::vector<std::vector<double>> orthonormal_basis(Rng& rng, std::size_t d, std::size_t r) {
  std::vector<std::vector<double>> cols;
  while (cols.size() < r) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    for (const auto& c : cols) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += v[i] * c[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * c[i];
    }
    double norm = 0.0;
    for (const double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    cols.push_back(std::move(v));
  }
  return cols;
}

}  // namespace detail

/// Generates the benchmark. Per-coordinate scales: class centroids
/// N(0, class_signal^2) in all dims, instance offsets N(0, instance_signal^2)
/// along each of the signal_rank subspace directions, view noise
/// N(0, noise_sigma^2). Single RNG stream, so the output depends only on cfg.
inline SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.feature_dim;
  const std::size_t rank = cfg.signal_rank;
  const std::size_t k = cfg.attrs_per_instance;

  const auto basis = detail::orthonormal_basis(rng, d, rank);
  // Each token's direction inside the signal subspace.
  std::vector<std::vector<double>> token_vectors(cfg.vocab_size, std::vector<double>(d, 0.0));
  for (auto& tv : token_vectors) {
    for (std::size_t c = 0; c < rank; ++c) {
      const double z = rng.normal();
      for (std::size_t i = 0; i < d; ++i) tv[i] += z * basis[c][i];
    }
  }
  std::vector<double> zipf(cfg.vocab_size);
  for (std::size_t r = 0; r < cfg.vocab_size; ++r) zipf[r] = 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf_exponent);

  SynthDataset ds;
  std::vector<std::string> ids;
  std::vector<float> data;
  std::vector<GroundTruthEntry> gt;
  const double offset_scale = cfg.instance_signal / std::sqrt(static_cast<double>(k));
  for (std::size_t cls = 0; cls < cfg.num_coarse_classes; ++cls) {
    std::vector<double> centroid(d);
    for (double& x : centroid) x = rng.normal() * cfg.class_signal;
    std::set<std::vector<std::size_t>> used;
    for (std::size_t inst = 0; inst < cfg.instances_per_class; ++inst) {
      std::vector<std::size_t> tokens;
      for (int attempt = 0;; ++attempt) {
        if (attempt == 10000) fail(ErrorKind::InvalidConfig, "cannot draw distinct attribute sets; vocabulary too small");
        tokens = detail::weighted_distinct(rng, zipf, k);
        if (used.insert(tokens).second) break;
      }
      const std::size_t global = ds.instance_tokens.size();
      ds.instance_tokens.push_back(tokens);
      std::vector<double> center = centroid;
      for (const std::size_t t : tokens) {
        for (std::size_t i = 0; i < d; ++i) center[i] += offset_scale * token_vectors[t][i];
      }
      GroundTruthEntry entry{synth_view_id(cls, inst, 0), {}};
      for (std::size_t view = 0; view < cfg.views_per_instance; ++view) {
        const std::size_t row = ids.size();
        ids.push_back(synth_view_id(cls, inst, view));
        for (std::size_t i = 0; i < d; ++i) data.push_back(static_cast<float>(center[i] + rng.normal() * cfg.noise_sigma));
        std::vector<std::size_t> order = tokens;
        rng.shuffle(std::span<std::size_t>(order));
        std::string title;
        for (const std::size_t t : order) {
          if (!title.empty()) title += ' ';
          title += synth_token(t);
        }
        ds.titles.push_back(std::move(title));
        ds.coarse_labels.push_back(cls);
        ds.instance_of.push_back(global);
        if (view == 0) {
          ds.query_rows.push_back(row);
        } else {
          ds.db_rows.push_back(row);
          entry.relevant.push_back(ids.back());
        }
      }
      gt.push_back(std::move(entry));
    }
  }
  ds.features = EmbeddingMatrix(std::move(ids), d, std::move(data));
  ds.ground_truth = GroundTruth(std::move(gt));
  return ds;
}

struct SynthFiles {
  std::string corpus;   // item_id<TAB>title, all views
  std::string coarse;   // item_id<TAB>class id (targets format, one label)
  std::string query;    // query views .emb
  std::string db;       // database views .emb
  std::string gt;       // query_id<TAB>relevant db ids

  static SynthFiles in(const std::string& dir) {
    const std::filesystem::path p(dir);
    return {(p / "corpus.tsv").string(), (p / "coarse.tsv").string(), (p / "query.emb").string(), (p / "db.emb").string(),
            (p / "gt.tsv").string()};
  }
};

inline SynthFiles export_dataset(const SynthDataset& ds, const std::string& dir) {
  const auto files = SynthFiles::in(dir);
  std::vector<CorpusRecord> corpus;
  std::vector<ItemAttributes> coarse;
  for (std::size_t i = 0; i < ds.features.rows(); ++i) {
    corpus.push_back({ds.features.id(i), ds.titles[i]});
    coarse.push_back({ds.features.id(i), {static_cast<AttrId>(ds.coarse_labels[i])}});
  }
  io::write_file(files.corpus, format_corpus(corpus));
  save_targets(files.coarse, coarse);
  save_embeddings(ds.queries(), files.query);
  save_embeddings(ds.database(), files.db);
  save_ground_truth(files.gt, ds.ground_truth);
  return files;
}

}  // namespace weakrank
