// weakrank: command-line front end for the retrieval toolchain.
//
// Exit codes: 0 success, 1 invalid usage/input, 2 runtime failure.
// Diagnostics go to stderr; results only to the files named by --out.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "weakrank/weakrank.hpp"

namespace {

using namespace weakrank;

void log_line(const std::string& msg) { std::cerr << "[weakrank] " << msg << "\n"; }

struct Globals {
  std::size_t threads = 0;
  std::int64_t seed = -1;
  bool resume = false;
};

void apply_overrides(Config& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::InvalidArgument, "--set expects key=value, got `" + kv + "`");
    cfg.set(std::string(detail::trim(kv.substr(0, eq))), std::string(detail::trim(kv.substr(eq + 1))));
  }
}

int run(int argc, char** argv) {
  CLI::App app{"weakrank: weakly supervised product retrieval toolchain"};
  app.set_version_flag("--version", std::string("weakrank ") + WEAKRANK_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (also capped by WEAKRANK_THREADS)");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_flag("--resume", g.resume, "Skip pipeline stages whose outputs are up to date");

  // mine-attrs
  std::string corpus, vocab_path, out, count_mode = "occurrences";
  std::uint64_t min_count = 30;
  bool no_lowercase = false;
  auto* mine = app.add_subcommand("mine-attrs", "Mine pseudo-attributes from a title corpus");
  mine->add_option("--corpus", corpus, "item_id<TAB>title file")->required();
  mine->add_option("--min-count", min_count, "Keep tokens seen more than this many times")->check(CLI::PositiveNumber);
  mine->add_option("--count", count_mode, "Frequency unit")->check(CLI::IsMember({"occurrences", "titles"}));
  mine->add_flag("--no-lowercase", no_lowercase, "Keep token case");
  mine->add_option("--out", out, "Vocabulary JSON")->required();

  // build-targets
  auto* targets_cmd = app.add_subcommand("build-targets", "Encode titles as soft multi-label targets");
  targets_cmd->add_option("--corpus", corpus)->required();
  targets_cmd->add_option("--vocab", vocab_path)->required();
  targets_cmd->add_flag("--no-lowercase", no_lowercase);
  targets_cmd->add_option("--out", out)->required();

  // histogram
  std::size_t top = 100;
  auto* hist = app.add_subcommand("histogram", "Top-N attribute frequency table as CSV");
  hist->add_option("--vocab", vocab_path)->required();
  hist->add_option("--top", top)->check(CLI::PositiveNumber);
  hist->add_option("--out", out)->required();

  // gen-synth
  std::string config_path;
  auto* synth = app.add_subcommand("gen-synth", "Generate the synthetic retrieval benchmark");
  synth->add_option("--config", config_path, "key = value synthetic config")->required();
  synth->add_option("--out", out, "Output directory")->required();

  // train
  std::string features, targets_path, model;
  std::size_t num_classes = 0;
  double lr = -1.0;
  auto* train_cmd = app.add_subcommand("train", "Train the encoder with PolyLoss");
  train_cmd->add_option("--features", features)->required();
  train_cmd->add_option("--targets", targets_path)->required();
  train_cmd->add_option("--config", config_path, "key = value model/training config");
  train_cmd->add_option("--vocab", vocab_path, "Take the class count from this vocabulary");
  train_cmd->add_option("--num-classes", num_classes);
  train_cmd->add_option("--lr", lr, "Base learning rate override");
  train_cmd->add_option("--out", out)->required();

  // embed
  bool use_ema = false;
  auto* embed_cmd = app.add_subcommand("embed", "Compute retrieval embeddings");
  embed_cmd->add_option("--model", model)->required();
  embed_cmd->add_flag("--ema", use_ema, "Use EMA weights");
  embed_cmd->add_option("--features", features)->required();
  embed_cmd->add_option("--out", out)->required();

  // whiten
  std::string db_path, in_path;
  double eps = 1e-6;
  bool no_normalize = false;
  auto* whiten_cmd = app.add_subcommand("whiten", "Whiten embeddings with database statistics, then L2-normalize");
  whiten_cmd->add_option("--db", db_path, "Database embeddings the transform is fitted on")->required();
  whiten_cmd->add_option("--in", in_path)->required();
  whiten_cmd->add_option("--eps", eps)->check(CLI::NonNegativeNumber);
  whiten_cmd->add_flag("--no-normalize", no_normalize);
  whiten_cmd->add_option("--out", out)->required();

  // ensemble
  std::vector<std::string> inputs;
  auto* ens = app.add_subcommand("ensemble", "Concatenate per-model embeddings");
  ens->add_option("--in", inputs)->required()->expected(1, -1);
  ens->add_option("--out", out)->required();

  // search
  std::string q_path, metric = "cosine";
  std::size_t top_n = 100, k = 10, k1 = 8, k2 = 5;
  double alpha = 0.5;
  bool rerank = false;
  auto* search = app.add_subcommand("search", "Exact top-N search with optional k-reciprocal re-ranking");
  search->add_option("--q", q_path)->required();
  search->add_option("--db", db_path)->required();
  search->add_option("--metric", metric)->check(CLI::IsMember({"cosine", "euclidean"}));
  search->add_option("--top-n", top_n)->check(CLI::PositiveNumber);
  search->add_option("--k", k)->check(CLI::PositiveNumber);
  search->add_flag("--rerank", rerank);
  search->add_option("--k1", k1)->check(CLI::PositiveNumber);
  search->add_option("--k2", k2)->check(CLI::PositiveNumber);
  search->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0));
  search->add_option("--out", out)->required();

  // eval
  std::string ranked_path, gt_path, denominator = "min";
  auto* eval = app.add_subcommand("eval", "MAR@k of ranked lists against ground truth");
  eval->add_option("--ranked", ranked_path)->required();
  eval->add_option("--gt", gt_path)->required();
  eval->add_option("--k", k)->check(CLI::PositiveNumber);
  eval->add_option("--denominator", denominator)->check(CLI::IsMember({"min", "full"}));
  eval->add_option("--out", out)->required();

  // ablate / pipeline
  std::vector<std::string> sets;
  bool print_config = false;
  auto* ablate = app.add_subcommand("ablate", "Ablation ladder: baseline, +whitening, +rerank, +ensemble");
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--set", sets, "key=value override")->take_all();
  ablate->add_option("--out", out)->required();
  auto* pipeline = app.add_subcommand("pipeline", "Run the full retrieval pipeline");
  pipeline->add_option("--config", config_path)->required();
  pipeline->add_option("--set", sets, "key=value override")->take_all();
  pipeline->add_flag("--print-config", print_config, "Print the resolved configuration and exit");

  // loss-check
  std::size_t instances = 100;
  auto* loss_check = app.add_subcommand("loss-check", "Finite-difference check of the PolyLoss gradient");
  loss_check->add_option("--instances", instances)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    // Errors go to stderr with the usage of the command that failed.
    const CLI::App* scope = &app;
    for (const auto* sub : app.get_subcommands()) scope = sub;
    std::cerr << e.what() << "\n" << scope->help();
    return 1;
  }
  if (g.threads > 0) setenv("WEAKRANK_THREADS", std::to_string(g.threads).c_str(), 1);
  const std::size_t workers = resolve_workers();

  if (*mine) {
    const auto records = load_corpus(corpus);
    std::vector<std::string> titles;
    titles.reserve(records.size());
    for (const auto& r : records) titles.push_back(r.title);
    const MinerOptions opts{!no_lowercase, count_mode == "titles"};
    const auto vocab = build_vocab(titles, min_count, opts, workers);
    vocab.save(out);
    log_line("mined " + std::to_string(vocab.size()) + " pseudo-attributes from " + std::to_string(records.size()) + " titles");
  } else if (*targets_cmd) {
    const auto vocab = AttributeVocab::load(vocab_path);
    const auto encoded = encode_corpus(load_corpus(corpus), vocab, !no_lowercase);
    save_targets(out, encoded.items);
    log_line("encoded " + std::to_string(encoded.items.size()) + " items, dropped " + std::to_string(encoded.dropped) +
             " without attributes");
  } else if (*hist) {
    io::write_file(out, histogram_csv(histogram(AttributeVocab::load(vocab_path), top)));
  } else if (*synth) {
    Config cfg = Config::load(config_path);
    if (g.seed >= 0) cfg.set("seed", std::to_string(g.seed));
    const auto ds = generate(synth_config_from(cfg));
    export_dataset(ds, out);
    log_line("wrote " + std::to_string(ds.features.rows()) + " views to " + out);
  } else if (*train_cmd) {
    Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
    cfg.require_known(model_config_keys());
    if (g.seed >= 0) cfg.set("seed", std::to_string(g.seed));
    EncoderConfig enc = encoder_config_from(cfg);
    TrainConfig tc = train_config_from(cfg);
    if (lr >= 0.0) tc.base_lr = lr;
    const auto items = load_targets(targets_path);
    if (num_classes > 0) {
      enc.num_classes = num_classes;
    } else if (!vocab_path.empty()) {
      enc.num_classes = AttributeVocab::load(vocab_path).size();
    } else if (enc.num_classes == 0) {
      enc.num_classes = infer_num_classes(items);
    }
    const auto set = align_training_set(load_embeddings(features), items, enc.num_classes);
    if (set.dropped) log_line("skipped " + std::to_string(set.dropped) + " feature rows without targets");
    const auto result = train(set.features, set.targets, enc, tc, [](std::size_t epoch, double loss) {
      log_line("epoch " + std::to_string(epoch + 1) + " loss " + io::format_double(loss));
    });
    save_checkpoint(result.weights, out);
  } else if (*embed_cmd) {
    save_embeddings(embed(load_checkpoint(model), load_embeddings(features), use_ema), out);
  } else if (*whiten_cmd) {
    const auto t = fit_whitening(load_embeddings(db_path), eps);
    auto result = apply_whitening(load_embeddings(in_path), t);
    if (!no_normalize) result = l2_normalize(result);
    save_embeddings(result, out);
  } else if (*ens) {
    std::vector<EmbeddingMatrix> members;
    for (const auto& p : inputs) members.push_back(load_embeddings(p));
    save_embeddings(ensemble_concat(members), out);
  } else if (*search) {
    SearchParams sp{parse_metric(metric), top_n, k, workers};
    if (sp.final_k > sp.top_n) fail(ErrorKind::InvalidArgument, "--k must be <= --top-n");
    const RerankParams rp{k1, k2, alpha};
    save_ranked(out, retrieve(load_embeddings(q_path), load_embeddings(db_path), sp, rerank, rp));
  } else if (*eval) {
    const auto report = mar_at_k(load_ranked(ranked_path), load_ground_truth(gt_path), k, parse_denominator(denominator));
    io::write_file(out, report.to_json());
    log_line("MAR@" + std::to_string(k) + " = " + io::format_double(report.mar) + " over " +
             std::to_string(report.per_query.size()) + " queries");
  } else if (*ablate || *pipeline) {
    Config cfg = Config::load(config_path);
    apply_overrides(cfg, sets);
    if (g.seed >= 0) cfg.set("model.seed", std::to_string(g.seed));
    if (g.threads > 0) cfg.set("run.threads", std::to_string(g.threads));
    if (g.resume) cfg.set("run.resume", "true");
    if (*ablate) {
      const auto rows = ablation_run(cfg, log_line);
      io::write_file(out, format_ladder(rows, PipelineConfig::from(cfg).eval_k));
    } else if (print_config) {
      PipelineConfig::from(cfg);
      std::cout << cfg.dump();
    } else {
      const auto result = run_pipeline(cfg, log_line);
      log_line("done: MAR@" + std::to_string(result.report.k) + " = " + io::format_double(result.report.mar));
    }
  } else if (*loss_check) {
    GradCheckOptions opt;
    opt.instances = instances;
    if (g.seed >= 0) opt.seed = static_cast<std::uint64_t>(g.seed);
    const auto r = check_poly_gradient(opt);
    log_line("checked " + std::to_string(r.instances) + " instances, max relative error " +
             io::format_double(r.max_relative_error));
    if (!(r.max_relative_error < 1e-4)) {
      log_line("gradient check FAILED (tolerance 1e-4)");
      return 2;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const weakrank::Error& e) {
    std::cerr << "[weakrank] error: " << e.what() << "\n";
    return e.is_runtime() ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "[weakrank] error: " << e.what() << "\n";
    return 2;
  }
}
