#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "test_util.hpp"
#include "weakrank/weakrank.hpp"

using namespace weakrank;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

// Runs the CLI with `args` (already shell-quoted where needed).
Outcome cli(const std::string& args, const weakrank::testing::TempDir& dir) {
  const auto out = dir.file("stdout.txt");
  const auto err = dir.file("stderr.txt");
  const std::string cmd = std::string(WEAKRANK_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(cmd.c_str());
  Outcome o{WIFEXITED(status) ? WEXITSTATUS(status) : -1, "", ""};
  if (std::filesystem::exists(out)) o.out = io::read_file(out);
  if (std::filesystem::exists(err)) o.err = io::read_file(err);
  return o;
}

const char* kSmallSynth =
    "num_coarse_classes = 4\ninstances_per_class = 20\nfeature_dim = 24\nvocab_size = 60\n"
    "attrs_per_instance = 4\nsignal_rank = 8\nseed = 3\n";

const char* kSmallModel =
    "hidden_dim = 32\nembed_dim = 8\nbatch_size = 32\nepochs = 4\nwarmup_epochs = 1\nbase_lr = 2e-3\n"
    "ema_decay = 0.9\nseed = 5\n";

}  // namespace

TEST(Cli, Version) {
  weakrank::testing::TempDir dir;
  const auto o = cli("--version", dir);
  EXPECT_EQ(o.code, 0);
  EXPECT_NE(o.out.find("weakrank 0.1.0"), std::string::npos) << o.out;
}

TEST(Cli, UsageErrorsExitOne) {
  weakrank::testing::TempDir dir;
  EXPECT_EQ(cli("", dir).code, 1);
  const auto missing = cli("mine-attrs --out x.json", dir);
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("--corpus"), std::string::npos) << missing.err;
  EXPECT_TRUE(missing.out.empty());
  const auto unknown = cli("search --q a --db b --out c --bogus", dir);
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("Usage"), std::string::npos) << unknown.err;
  EXPECT_NE(unknown.err.find("--bogus"), std::string::npos) << unknown.err;
  EXPECT_EQ(cli("frobnicate", dir).code, 1);
  EXPECT_EQ(cli("search --q a --db b --out c --metric manhattan", dir).code, 1);
}

TEST(Cli, RuntimeAndValidationErrorCodes) {
  weakrank::testing::TempDir dir;
  const auto io = cli("mine-attrs --corpus " + dir.file("nope.tsv") + " --out " + dir.file("v.json"), dir);
  EXPECT_EQ(io.code, 2);
  EXPECT_NE(io.err.find("IoError"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir.file("v.json")));

  io::write_file(dir.file("c.tsv"), "i1\tred apple\ni2\tblue\n");
  const auto empty = cli("mine-attrs --corpus " + dir.file("c.tsv") + " --min-count 5 --out " + dir.file("v.json"), dir);
  EXPECT_EQ(empty.code, 1);
  EXPECT_NE(empty.err.find("EmptyVocab"), std::string::npos);

  io::write_file(dir.file("bad.emb"), "WRK1junk");
  EXPECT_EQ(cli("ensemble --in " + dir.file("bad.emb") + " --out " + dir.file("e.emb"), dir).code, 2);
}

TEST(Cli, AttributeCommands) {
  weakrank::testing::TempDir dir;
  io::write_file(dir.file("c.tsv"), "i1\tred apple phone\ni2\tred case\ni3\tApple case\ni4\tzzz\n");
  ASSERT_EQ(cli("mine-attrs --corpus " + dir.file("c.tsv") + " --min-count 1 --out " + dir.file("v.json"), dir).code, 0);
  EXPECT_EQ(AttributeVocab::load(dir.file("v.json")).size(), 3u);
  ASSERT_EQ(cli("build-targets --corpus " + dir.file("c.tsv") + " --vocab " + dir.file("v.json") + " --out " + dir.file("t.tsv"), dir).code, 0);
  EXPECT_EQ(io::read_file(dir.file("t.tsv")), "i1\t0,2\ni2\t1,2\ni3\t0,1\n");
  ASSERT_EQ(cli("histogram --vocab " + dir.file("v.json") + " --top 2 --out " + dir.file("h.csv"), dir).code, 0);
  EXPECT_EQ(io::read_file(dir.file("h.csv")), "rank,token,count\n1,apple,2\n2,case,2\n");
  EXPECT_EQ(cli("loss-check --instances 20", dir).code, 0);
}

TEST(Cli, StageByStageMatchesPipeline) {
  weakrank::testing::TempDir dir;
  const auto d = [&](const std::string& f) { return dir.file(f); };
  io::write_file(d("synth.cfg"), kSmallSynth);
  io::write_file(d("train.cfg"), kSmallModel);
  ASSERT_EQ(cli("gen-synth --config " + d("synth.cfg") + " --out " + d("data"), dir).code, 0);
  ASSERT_EQ(cli("mine-attrs --corpus " + d("data/corpus.tsv") + " --min-count 2 --out " + d("vocab.json"), dir).code, 0);
  ASSERT_EQ(cli("build-targets --corpus " + d("data/corpus.tsv") + " --vocab " + d("vocab.json") + " --out " + d("t.tsv"), dir).code, 0);
  const auto tr = cli("--threads 1 train --features " + d("data/db.emb") + " --targets " + d("t.tsv") + " --vocab " +
                          d("vocab.json") + " --config " + d("train.cfg") + " --out " + d("m.ckpt"),
                      dir);
  ASSERT_EQ(tr.code, 0) << tr.err;
  ASSERT_EQ(cli("embed --model " + d("m.ckpt") + " --features " + d("data/query.emb") + " --out " + d("q.emb"), dir).code, 0);
  ASSERT_EQ(cli("embed --model " + d("m.ckpt") + " --features " + d("data/db.emb") + " --out " + d("db.emb"), dir).code, 0);
  ASSERT_EQ(cli("whiten --db " + d("db.emb") + " --in " + d("q.emb") + " --eps 1 --out " + d("qw.emb"), dir).code, 0);
  ASSERT_EQ(cli("whiten --db " + d("db.emb") + " --in " + d("db.emb") + " --eps 1 --out " + d("dbw.emb"), dir).code, 0);
  ASSERT_EQ(cli("--threads 1 search --q " + d("qw.emb") + " --db " + d("dbw.emb") + " --top-n 20 --k 10 --out " + d("ranked.tsv"), dir).code, 0);
  ASSERT_EQ(cli("eval --ranked " + d("ranked.tsv") + " --gt " + d("data/gt.tsv") + " --k 10 --out " + d("report.json"), dir).code, 0);

  std::string pipeline_cfg = "paths.work_dir = " + d("run") + "\nsynth.enabled = true\nmine.min_count = 2\n";
  for (const auto& line : io::lines(kSmallSynth)) {
    if (!line.empty()) pipeline_cfg += "synth." + std::string(line) + "\n";
  }
  for (const auto& line : io::lines(kSmallModel)) {
    if (!line.empty() && line.rfind("seed", 0) != 0) pipeline_cfg += "model." + std::string(line) + "\n";
  }
  pipeline_cfg += "ensemble.seeds = 5\nwhiten.eps = 1\nsearch.top_n = 20\nrerank.enabled = false\n";
  io::write_file(d("p.cfg"), pipeline_cfg);
  const auto run = cli("--threads 1 pipeline --config " + d("p.cfg"), dir);
  ASSERT_EQ(run.code, 0) << run.err;
  EXPECT_EQ(io::read_file(d("run/ranked.tsv")), io::read_file(d("ranked.tsv")));
  EXPECT_EQ(io::read_file(d("run/report.json")), io::read_file(d("report.json")));

  // Re-ranked search and the ensemble command on the same artifacts.
  ASSERT_EQ(cli("search --q " + d("qw.emb") + " --db " + d("dbw.emb") + " --top-n 20 --k 10 --rerank --k1 4 --k2 1 --alpha 0.7 --out " +
                    d("rr.tsv"),
                dir)
                .code,
            0);
  EXPECT_EQ(load_ranked(d("rr.tsv")).size(), 80u);
  ASSERT_EQ(cli("ensemble --in " + d("qw.emb") + " " + d("qw.emb") + " --out " + d("ens.emb"), dir).code, 0);
  EXPECT_EQ(load_embeddings(d("ens.emb")).dim(), 16u);

  const auto printed = cli("pipeline --config " + d("p.cfg") + " --set search.k=5 --print-config", dir);
  EXPECT_EQ(printed.code, 0);
  EXPECT_NE(printed.out.find("search.k = 5"), std::string::npos) << printed.out;

  const auto resumed = cli("--threads 1 --resume pipeline --config " + d("p.cfg"), dir);
  EXPECT_EQ(resumed.code, 0);
  EXPECT_NE(resumed.err.find("up to date"), std::string::npos);
  EXPECT_EQ(io::read_file(d("run/ranked.tsv")), io::read_file(d("ranked.tsv")));
}

TEST(Cli, AblateFailureLeavesNoCsv) {
  weakrank::testing::TempDir dir;
  io::write_file(dir.file("a.cfg"), "paths.work_dir = " + dir.file("run") + "\npaths.query = " + dir.file("q.emb") +
                                        "\npaths.db = " + dir.file("q.emb") + "\npaths.gt = " + dir.file("gt.tsv") +
                                        "\nensemble.checkpoints = " + dir.file("m.ckpt") + "\n");
  const auto o = cli("ablate --config " + dir.file("a.cfg") + " --out " + dir.file("ladder.csv"), dir);
  EXPECT_EQ(o.code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir.file("ladder.csv")));
  EXPECT_NE(o.err.find("stage"), std::string::npos);
}
