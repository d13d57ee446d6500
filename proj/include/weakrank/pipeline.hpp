#pragma once

// End-to-end retrieval pipeline:
//   per model: embed queries and database -> fit whitening on the database
//   -> whiten both -> L2-normalize both; then concatenate across models ->
//   exact top-N search -> k-reciprocal re-ranking -> top-k -> MAR@k.
//
// Every stage persists its outputs under the work directory; with resume
// enabled a stage whose outputs and fingerprint are present is skipped.

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "weakrank/attribute_miner.hpp"
#include "weakrank/config.hpp"
#include "weakrank/embedding.hpp"
#include "weakrank/encoder.hpp"
#include "weakrank/error.hpp"
#include "weakrank/evaluator.hpp"
#include "weakrank/io.hpp"
#include "weakrank/retrieval.hpp"
#include "weakrank/synthetic.hpp"

namespace weakrank {

/// Raised when a pipeline stage fails; carries the stage name and the
/// original error kind.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), "stage `" + stage + "` failed: " + cause.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct EnsembleMember {
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::string checkpoint;  // pre-trained weights; empty to train in the pipeline
};

enum class TargetSource { Attributes, Coarse };

struct PipelineConfig {
  // inputs
  std::string corpus;
  std::string query;
  std::string db;
  std::string gt;
  std::string train_features;  // defaults to db
  std::string coarse;
  std::string work_dir = "work";

  bool synth_enabled = false;
  SynthConfig synth;

  std::uint64_t min_count = 30;
  MinerOptions miner;
  TargetSource targets = TargetSource::Attributes;

  EncoderConfig encoder;
  TrainConfig train;
  std::vector<EnsembleMember> members;
  bool use_ema = false;

  bool whiten = true;
  double whiten_eps = 1e-6;
  SearchParams search;
  bool rerank = true;
  RerankParams rerank_params;
  std::size_t eval_k = 10;
  Denominator denominator = Denominator::MinRelevantK;

  bool resume = false;
  std::size_t threads = 0;
  std::vector<std::string> ablate_variants = {"baseline", "whitening", "rerank", "ensemble"};

  std::string path(const std::string& name) const { return (std::filesystem::path(work_dir) / name).string(); }

  static PipelineConfig from(const Config& cfg) {
    static const std::set<std::string> known = {
        "paths.corpus", "paths.query", "paths.db", "paths.gt", "paths.train_features", "paths.coarse", "paths.work_dir",
        "synth.enabled", "mine.min_count", "mine.lowercase", "mine.count_titles", "targets.source", "ensemble.seeds",
        "ensemble.lrs", "ensemble.checkpoints", "embed.use_ema", "whiten.enabled", "whiten.eps", "search.metric",
        "search.top_n", "search.k", "rerank.enabled", "rerank.k1", "rerank.k2", "rerank.alpha", "eval.k",
        "eval.denominator", "run.resume", "run.threads", "ablate.variants"};
    std::set<std::string> model_keys;
    for (const auto& k : model_config_keys()) model_keys.insert("model." + k);
    std::set<std::string> all = known;
    all.insert(model_keys.begin(), model_keys.end());
    cfg.require_known(all, {"synth."});

    PipelineConfig p;
    p.synth_enabled = cfg.get_bool("synth.enabled", false);
    p.synth = synth_config_from(cfg, "synth.");
    p.work_dir = cfg.get_string("paths.work_dir", p.work_dir);
    if (p.synth_enabled) {
      const auto files = SynthFiles::in(p.path("data"));
      p.corpus = files.corpus;
      p.query = files.query;
      p.db = files.db;
      p.gt = files.gt;
      p.coarse = files.coarse;
    }
    p.corpus = cfg.get_string("paths.corpus", p.corpus);
    p.query = cfg.get_string("paths.query", p.query);
    p.db = cfg.get_string("paths.db", p.db);
    p.gt = cfg.get_string("paths.gt", p.gt);
    p.coarse = cfg.get_string("paths.coarse", p.coarse);
    p.train_features = cfg.get_string("paths.train_features", p.db);

    const auto min_count = cfg.get_int("mine.min_count", 30);
    if (min_count < 1) fail(ErrorKind::InvalidConfig, "mine.min_count must be >= 1");
    p.min_count = static_cast<std::uint64_t>(min_count);
    p.miner.lowercase = cfg.get_bool("mine.lowercase", true);
    p.miner.count_titles = cfg.get_bool("mine.count_titles", false);
    const auto source = cfg.get_string("targets.source", "attributes");
    if (source == "attributes") {
      p.targets = TargetSource::Attributes;
    } else if (source == "coarse") {
      p.targets = TargetSource::Coarse;
    } else {
      fail(ErrorKind::InvalidConfig, "targets.source must be attributes or coarse");
    }

    p.encoder = encoder_config_from(cfg, "model.");
    p.train = train_config_from(cfg, "model.");

    const auto seeds = cfg.get_list("ensemble.seeds");
    const auto lrs = cfg.get_list("ensemble.lrs");
    const auto ckpts = cfg.get_list("ensemble.checkpoints");
    const std::size_t count = std::max({seeds.size(), ckpts.size(), std::size_t{1}});
    if ((!seeds.empty() && seeds.size() != count) || (!lrs.empty() && lrs.size() != count) ||
        (!ckpts.empty() && ckpts.size() != count)) {
      fail(ErrorKind::InvalidConfig, "ensemble.seeds, ensemble.lrs and ensemble.checkpoints must have equal lengths");
    }
    for (std::size_t i = 0; i < count; ++i) {
      EnsembleMember m;
      try {
        m.seed = seeds.empty() ? p.train.seed : std::stoull(seeds[i]);
        m.lr = lrs.empty() ? p.train.base_lr : std::stod(lrs[i]);
      } catch (const std::exception&) {
        fail(ErrorKind::InvalidConfig, "bad ensemble seed or lr");
      }
      if (!ckpts.empty()) m.checkpoint = ckpts[i];
      p.members.push_back(m);
    }
    p.use_ema = cfg.get_bool("embed.use_ema", false);

    p.whiten = cfg.get_bool("whiten.enabled", true);
    p.whiten_eps = cfg.get_double("whiten.eps", 1e-6);
    p.search.metric = parse_metric(cfg.get_string("search.metric", "cosine"));
    p.search.top_n = static_cast<std::size_t>(cfg.get_int("search.top_n", 100));
    p.search.final_k = static_cast<std::size_t>(cfg.get_int("search.k", 10));
    p.rerank = cfg.get_bool("rerank.enabled", true);
    p.rerank_params.k1 = static_cast<std::size_t>(cfg.get_int("rerank.k1", 8));
    p.rerank_params.k2 = static_cast<std::size_t>(cfg.get_int("rerank.k2", 5));
    p.rerank_params.alpha = cfg.get_double("rerank.alpha", 0.5);
    p.eval_k = static_cast<std::size_t>(cfg.get_int("eval.k", 10));
    p.denominator = parse_denominator(cfg.get_string("eval.denominator", "min"));
    p.resume = cfg.get_bool("run.resume", false);
    p.threads = static_cast<std::size_t>(cfg.get_int("run.threads", 0));
    p.search.workers = p.threads;
    if (cfg.has("ablate.variants")) p.ablate_variants = cfg.get_list("ablate.variants");
    p.validate();
    return p;
  }

  void validate() const {
    if (!synth_enabled && (query.empty() || db.empty() || gt.empty())) {
      fail(ErrorKind::InvalidConfig, "paths.query, paths.db and paths.gt are required unless synth.enabled");
    }
    if (members.empty()) fail(ErrorKind::InvalidConfig, "ensemble needs at least one member");
    if (search.final_k < 1 || search.top_n < search.final_k) fail(ErrorKind::InvalidConfig, "need 1 <= search.k <= search.top_n");
    if (rerank) rerank_params.validate();
    if (eval_k < 1) fail(ErrorKind::InvalidConfig, "eval.k must be >= 1");
    for (const auto& v : ablate_variants) {
      if (v != "baseline" && v != "whitening" && v != "rerank" && v != "ensemble") {
        fail(ErrorKind::InvalidConfig, "unknown ablation variant `" + v + "`");
      }
    }
  }
};

using Logger = std::function<void(const std::string&)>;

/// Training rows: feature rows whose id has a targets entry, in feature order.
struct TrainingSet {
  MatrixD features;
  SoftTargets targets;
  std::size_t dropped = 0;  // feature rows without targets
};

inline TrainingSet align_training_set(const EmbeddingMatrix& features, const std::vector<ItemAttributes>& items,
                                      std::size_t num_classes) {
  std::map<std::string, const ItemAttributes*> by_id;
  for (const auto& item : items) by_id.emplace(item.item_id, &item);
  std::vector<std::size_t> rows;
  std::vector<ItemAttributes> kept;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto it = by_id.find(features.id(i));
    if (it == by_id.end()) continue;
    rows.push_back(i);
    kept.push_back(*it->second);
  }
  if (rows.empty()) fail(ErrorKind::InvalidArgument, "no feature row has a training target");
  TrainingSet out;
  out.features = to_matrix(features.subset(rows));
  out.targets = SoftTargets(std::move(kept), num_classes);
  out.dropped = features.rows() - rows.size();
  return out;
}

inline std::size_t infer_num_classes(const std::vector<ItemAttributes>& items) {
  AttrId max_id = 0;
  for (const auto& item : items) {
    for (const AttrId id : item.attr_ids) max_id = std::max(max_id, id);
  }
  return static_cast<std::size_t>(max_id) + 1;
}

/// Whitening fitted on the database (when enabled), applied to both sides,
/// then L2 normalization.
inline std::pair<EmbeddingMatrix, EmbeddingMatrix> postprocess(const EmbeddingMatrix& query, const EmbeddingMatrix& db,
                                                               bool whiten, double eps) {
  if (!whiten) return {l2_normalize(query), l2_normalize(db)};
  const auto t = fit_whitening(db, eps);
  return {l2_normalize(apply_whitening(query, t)), l2_normalize(apply_whitening(db, t))};
}

/// Exact search followed, when enabled, by re-ranking; returns top final_k.
inline std::vector<RankedList> retrieve(const EmbeddingMatrix& query, const EmbeddingMatrix& db, const SearchParams& search,
                                        bool rerank, const RerankParams& rerank_params) {
  if (!rerank) {
    SearchParams p = search;
    p.top_n = search.final_k;
    return top_n_search(query, db, p);
  }
  const auto candidates = top_n_search(query, db, search);
  return k_reciprocal_rerank(query, db, candidates, rerank_params, search.final_k, search.metric, search.workers);
}

struct PipelineResult {
  EvalReport report;
  std::vector<RankedList> ranked;
  std::vector<std::string> skipped_stages;
};

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, std::string fingerprint, Logger log = {})
      : cfg_(std::move(cfg)), fingerprint_(std::move(fingerprint)), log_(std::move(log)) {}

  const PipelineConfig& config() const noexcept { return cfg_; }
  const std::vector<std::string>& skipped() const noexcept { return skipped_; }

  struct MemberPaths {
    std::string checkpoint, query, db, query_post, db_post;
  };

  MemberPaths member_paths(std::size_t i) const {
    const std::string stem = "member" + std::to_string(i);
    return {cfg_.members[i].checkpoint.empty() ? cfg_.path(stem + ".ckpt") : cfg_.members[i].checkpoint,
            cfg_.path(stem + ".query.emb"), cfg_.path(stem + ".db.emb"), cfg_.path(stem + ".query.post.emb"),
            cfg_.path(stem + ".db.post.emb")};
  }

  /// Data generation, mining, training, embedding and per-member post-processing.
  void prepare_members() {
    if (cfg_.synth_enabled) {
      stage("gen-synth", {cfg_.query, cfg_.db, cfg_.gt, cfg_.corpus, cfg_.coarse},
            [&] { export_dataset(generate(cfg_.synth), cfg_.path("data")); });
    }
    const bool needs_training = std::any_of(cfg_.members.begin(), cfg_.members.end(),
                                            [](const EnsembleMember& m) { return m.checkpoint.empty(); });
    std::string targets_path = cfg_.path("targets.tsv");
    if (needs_training && cfg_.targets == TargetSource::Attributes) {
      if (cfg_.corpus.empty()) fail(ErrorKind::InvalidConfig, "paths.corpus is required to mine attributes");
      stage("mine-attrs", {cfg_.path("vocab.json")}, [&] {
        const auto corpus = load_corpus(cfg_.corpus);
        std::vector<std::string> titles;
        for (const auto& r : corpus) titles.push_back(r.title);
        const auto vocab = build_vocab(titles, cfg_.min_count, cfg_.miner, resolve_workers(cfg_.threads));
        log("mined " + std::to_string(vocab.size()) + " pseudo-attributes");
        vocab.save(cfg_.path("vocab.json"));
      });
      stage("build-targets", {targets_path}, [&] {
        const auto vocab = AttributeVocab::load(cfg_.path("vocab.json"));
        const auto encoded = encode_corpus(load_corpus(cfg_.corpus), vocab, cfg_.miner.lowercase);
        if (encoded.dropped) log("dropped " + std::to_string(encoded.dropped) + " items without attributes");
        save_targets(targets_path, encoded.items);
      });
    } else if (needs_training) {
      if (cfg_.coarse.empty()) fail(ErrorKind::InvalidConfig, "paths.coarse is required for coarse-label training");
      targets_path = cfg_.coarse;
    }

    for (std::size_t i = 0; i < cfg_.members.size(); ++i) {
      const auto& member = cfg_.members[i];
      const auto paths = member_paths(i);
      const std::string tag = std::to_string(i);
      if (member.checkpoint.empty()) {
        stage("train:" + tag, {paths.checkpoint}, [&] {
          const auto items = load_targets(targets_path);
          std::size_t classes = cfg_.encoder.num_classes;
          if (classes == 0) {
            classes = cfg_.targets == TargetSource::Attributes ? AttributeVocab::load(cfg_.path("vocab.json")).size()
                                                               : infer_num_classes(items);
          }
          const auto set = align_training_set(load_embeddings(cfg_.train_features), items, classes);
          TrainConfig tc = cfg_.train;
          tc.seed = member.seed;
          tc.base_lr = member.lr;
          const auto result = train(set.features, set.targets, cfg_.encoder, tc, [&](std::size_t epoch, double loss) {
            log("member " + tag + " epoch " + std::to_string(epoch + 1) + " loss " + io::format_double(loss));
          });
          save_checkpoint(result.weights, paths.checkpoint);
        });
      }
      stage("embed:" + tag, {paths.query, paths.db}, [&] {
        const auto weights = load_checkpoint(paths.checkpoint);
        save_embeddings(embed(weights, load_embeddings(cfg_.query), cfg_.use_ema), paths.query);
        save_embeddings(embed(weights, load_embeddings(cfg_.db), cfg_.use_ema), paths.db);
      });
      stage("whiten:" + tag, {paths.query_post, paths.db_post}, [&] {
        const auto [q, d] = postprocess(load_embeddings(paths.query), load_embeddings(paths.db), cfg_.whiten, cfg_.whiten_eps);
        save_embeddings(q, paths.query_post);
        save_embeddings(d, paths.db_post);
      });
    }
  }

  PipelineResult run() {
    prepare_members();
    const std::string q_ens = cfg_.path("ensemble.query.emb");
    const std::string db_ens = cfg_.path("ensemble.db.emb");
    stage("ensemble", {q_ens, db_ens}, [&] {
      std::vector<EmbeddingMatrix> qs;
      std::vector<EmbeddingMatrix> ds;
      for (std::size_t i = 0; i < cfg_.members.size(); ++i) {
        qs.push_back(load_embeddings(member_paths(i).query_post));
        ds.push_back(load_embeddings(member_paths(i).db_post));
      }
      save_embeddings(ensemble_concat(qs), q_ens);
      save_embeddings(ensemble_concat(ds), db_ens);
    });
    const std::string ranked_path = cfg_.path("ranked.tsv");
    const std::string report_path = cfg_.path("report.json");
    PipelineResult result;
    stage("search", {ranked_path}, [&] {
      save_ranked(ranked_path, retrieve(load_embeddings(q_ens), load_embeddings(db_ens), cfg_.search, cfg_.rerank,
                                        cfg_.rerank_params));
    });
    stage("eval", {report_path}, [&] {
      const auto report = mar_at_k(load_ranked(ranked_path), load_ground_truth(cfg_.gt), cfg_.eval_k, cfg_.denominator);
      io::write_file(report_path, report.to_json());
      log("MAR@" + std::to_string(cfg_.eval_k) + " = " + io::format_double(report.mar));
    });
    try {
      result.ranked = load_ranked(ranked_path);
      result.report = mar_at_k(result.ranked, load_ground_truth(cfg_.gt), cfg_.eval_k, cfg_.denominator);
    } catch (const Error& e) {
      throw StageError("eval", e);
    }
    result.skipped_stages = skipped_;
    return result;
  }

 private:
  template <typename Body>
  void stage(const std::string& name, const std::vector<std::string>& outputs, Body&& body) {
    const auto marker = (std::filesystem::path(cfg_.work_dir) / ".stages" / sanitize(name)).string();
    if (cfg_.resume && !dirty_ && complete(marker, outputs)) {
      log("stage " + name + ": up to date, skipped");
      skipped_.push_back(name);
      return;
    }
    std::error_code ec;
    std::filesystem::remove(marker, ec);
    log("stage " + name);
    dirty_ = true;
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(name, e);
    }
    io::write_file(marker, fingerprint_);
  }

  bool complete(const std::string& marker, const std::vector<std::string>& outputs) const {
    for (const auto& o : outputs) {
      if (!std::filesystem::exists(o)) return false;
    }
    if (!std::filesystem::exists(marker)) return false;
    try {
      return io::read_file(marker) == fingerprint_;
    } catch (const Error&) {
      return false;
    }
  }

  static std::string sanitize(std::string s) {
    for (char& c : s) {
      if (c == ':' || c == '/') c = '_';
    }
    return s;
  }

  void log(const std::string& msg) const {
    if (log_) log_(msg);
  }

  PipelineConfig cfg_;
  std::string fingerprint_;
  Logger log_;
  std::vector<std::string> skipped_;
  bool dirty_ = false;  // a stage ran; everything downstream must rerun
};

/// Configuration fingerprint for stage markers: run-control keys do not
/// change outputs and are left out.
inline std::string config_fingerprint(const Config& cfg) {
  Config copy;
  for (const auto& [k, v] : cfg.values()) {
    if (k != "run.resume" && k != "run.threads") copy.set(k, v);
  }
  return copy.dump();
}

inline PipelineResult run_pipeline(const Config& cfg, Logger log = {}) {
  Pipeline p(PipelineConfig::from(cfg), config_fingerprint(cfg), std::move(log));
  return p.run();
}

struct LadderRow {
  std::string variant;
  double mar = 0.0;
};

/// Runs each ablation variant on the same member embeddings:
///   baseline  - first member, L2-normalized, exact search
///   whitening - first member, whitened + normalized
///   rerank    - whitening + k-reciprocal re-ranking
///   ensemble  - all members concatenated + re-ranking
inline std::vector<LadderRow> ablation_run(const Config& cfg, Logger log = {}) {
  Pipeline p(PipelineConfig::from(cfg), config_fingerprint(cfg), log);
  p.prepare_members();
  const auto& c = p.config();
  const auto gt = load_ground_truth(c.gt);
  const auto first = p.member_paths(0);
  std::vector<LadderRow> rows;
  for (const auto& variant : c.ablate_variants) {
    std::vector<RankedList> ranked;
    try {
      if (variant == "baseline") {
        const auto [q, d] = postprocess(load_embeddings(first.query), load_embeddings(first.db), false, c.whiten_eps);
        ranked = retrieve(q, d, c.search, false, c.rerank_params);
      } else if (variant == "whitening" || variant == "rerank") {
        const auto [q, d] = postprocess(load_embeddings(first.query), load_embeddings(first.db), true, c.whiten_eps);
        ranked = retrieve(q, d, c.search, variant == "rerank", c.rerank_params);
      } else {
        std::vector<EmbeddingMatrix> qs;
        std::vector<EmbeddingMatrix> ds;
        for (std::size_t i = 0; i < c.members.size(); ++i) {
          const auto m = p.member_paths(i);
          auto [q, d] = postprocess(load_embeddings(m.query), load_embeddings(m.db), true, c.whiten_eps);
          qs.push_back(std::move(q));
          ds.push_back(std::move(d));
        }
        ranked = retrieve(ensemble_concat(qs), ensemble_concat(ds), c.search, true, c.rerank_params);
      }
    } catch (const Error& e) {
      throw StageError("ablate:" + variant, e);
    }
    const double mar = mar_at_k(ranked, gt, c.eval_k, c.denominator).mar;
    if (log) log("ablation " + variant + ": MAR@" + std::to_string(c.eval_k) + " = " + io::format_double(mar));
    rows.push_back({variant, mar});
  }
  return rows;
}

inline std::string format_ladder(const std::vector<LadderRow>& rows, std::size_t k) {
  std::string out = "variant,mar_at_" + std::to_string(k) + "\n";
  for (const auto& r : rows) out += r.variant + "," + io::format_double(r.mar) + "\n";
  return out;
}

}  // namespace weakrank
