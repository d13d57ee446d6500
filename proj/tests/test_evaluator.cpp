#include <gtest/gtest.h>

#include <algorithm>

#include "test_util.hpp"
#include "weakrank/evaluator.hpp"
#include "weakrank/rng.hpp"

using namespace weakrank;

namespace {

RankedList list(const std::string& q, const std::vector<std::string>& ids) {
  RankedList l{q, {}};
  for (std::size_t i = 0; i < ids.size(); ++i) l.entries.push_back({ids[i], 0.1 * static_cast<double>(i), i});
  return l;
}

}  // namespace

TEST(RecallAtK, Examples) {
  EXPECT_DOUBLE_EQ(recall_at_k(list("q", {"x", "a", "y", "z"}), {"a", "b"}, 10), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(list("q", {"a", "x"}), {"a"}, 10), 1.0);

  std::vector<std::string> relevant;
  std::vector<std::string> ranked;
  for (int i = 0; i < 15; ++i) relevant.push_back("r" + std::to_string(i));
  for (int i = 0; i < 10; ++i) ranked.push_back("r" + std::to_string(i));
  EXPECT_DOUBLE_EQ(recall_at_k(list("q", ranked), relevant, 10), 1.0);
  EXPECT_DOUBLE_EQ(recall_at_k(list("q", ranked), relevant, 10, Denominator::Full), 10.0 / 15.0);

  // Hits below rank k do not count.
  EXPECT_DOUBLE_EQ(recall_at_k(list("q", {"x", "y", "a"}), {"a"}, 2), 0.0);
  EXPECT_DOUBLE_EQ(recall_at_k(list("q", {}), {"a"}, 3), 0.0);
}

TEST(RecallAtK, Errors) {
  EXPECT_WR_ERROR(recall_at_k(list("q", {"a"}), {}, 10), EmptyRelevantSet);
  EXPECT_WR_ERROR(recall_at_k(list("q", {"a", "b", "a"}), {"a"}, 10), DuplicateId);
  EXPECT_WR_ERROR(recall_at_k(list("q", {"a"}), {"a"}, 0), InvalidArgument);
  EXPECT_WR_ERROR(parse_denominator("half"), InvalidArgument);
  EXPECT_EQ(parse_denominator("full"), Denominator::Full);
  EXPECT_EQ(parse_denominator("min"), Denominator::MinRelevantK);
}

TEST(RecallAtK, MonotoneInKProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> pool;
    for (int i = 0; i < 30; ++i) pool.push_back("d" + std::to_string(i));
    rng.shuffle(std::span<std::string>(pool));
    const std::vector<std::string> ranked(pool.begin(), pool.begin() + 20);
    std::vector<std::string> relevant;
    for (const auto& id : pool) {
      if (rng.bernoulli(0.2)) relevant.push_back(id);
    }
    if (relevant.empty()) relevant.push_back(pool[25]);
    const auto l = list("q", ranked);
    double prev = 0.0;
    double prev_full = 0.0;
    for (std::size_t k = 1; k <= 25; ++k) {
      const double r = recall_at_k(l, relevant, k);
      const double f = recall_at_k(l, relevant, k, Denominator::Full);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
      EXPECT_GE(f, prev_full);
      // The min denominator grows with k until |relevant|, so only Full is
      // monotone for every k; past |relevant| both are.
      if (k > relevant.size()) EXPECT_GE(r, prev);
      prev = r;
      prev_full = f;
    }
  }
}

TEST(RecallAtK, AppendingBelowKIsNeutral) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("d" + std::to_string(i));
    const std::vector<std::string> relevant = {"d" + std::to_string(rng.below(15)), "d" + std::to_string(10 + rng.below(5))};
    const double before = recall_at_k(list("q", ids), relevant, 10);
    auto longer = ids;
    for (int i = 0; i < 5; ++i) longer.push_back("n" + std::to_string(i));
    EXPECT_EQ(recall_at_k(list("q", longer), relevant, 10), before);
  }
}

TEST(MarAtK, Examples) {
  const GroundTruth gt({{"q1", {"a", "b"}}, {"q2", {"c"}}});
  const auto report = mar_at_k({list("q1", {"a", "x"}), list("q2", {"c"})}, gt, 10);
  EXPECT_DOUBLE_EQ(report.mar, 0.75);
  ASSERT_EQ(report.per_query.size(), 2u);
  EXPECT_EQ(report.per_query[0].id, "q1");
  EXPECT_DOUBLE_EQ(report.per_query[0].recall, 0.5);

  const auto perfect = mar_at_k({list("q1", {"b", "a"}), list("q2", {"c", "a"})}, gt, 2);
  EXPECT_DOUBLE_EQ(perfect.mar, 1.0);
}

TEST(MarAtK, ToyDatabaseHandComputed) {
  // db {d1..d5}; q1 relevant {d1,d2}, q2 {d3}, q3 {d4,d5,d1}; k = 2.
  const GroundTruth gt({{"q1", {"d1", "d2"}}, {"q2", {"d3"}}, {"q3", {"d4", "d5", "d1"}}});
  const std::vector<RankedList> ranked = {
      list("q1", {"d2", "d3", "d1"}),  // 1 of min(2,2) -> 1/2
      list("q2", {"d1", "d2", "d3"}),  // d3 at rank 3 -> 0
      list("q3", {"d5", "d1", "d4"}),  // 2 of min(3,2) -> 1
  };
  const auto report = mar_at_k(ranked, gt, 2);
  EXPECT_DOUBLE_EQ(report.per_query[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(report.per_query[1].recall, 0.0);
  EXPECT_DOUBLE_EQ(report.per_query[2].recall, 1.0);
  EXPECT_DOUBLE_EQ(report.mar, 0.5);
  EXPECT_DOUBLE_EQ(mar_at_k(ranked, gt, 2, Denominator::Full).mar, (0.5 + 0.0 + 2.0 / 3.0) / 3.0);
}

TEST(MarAtK, MeanAndPermutationProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GroundTruthEntry> entries;
    std::vector<RankedList> ranked;
    const std::size_t nq = 1 + rng.below(40);
    for (std::size_t q = 0; q < nq; ++q) {
      const std::string qid = "q" + std::to_string(q);
      std::vector<std::string> pool;
      for (int i = 0; i < 20; ++i) pool.push_back("d" + std::to_string(i));
      rng.shuffle(std::span<std::string>(pool));
      entries.push_back({qid, {pool.begin(), pool.begin() + 1 + static_cast<std::ptrdiff_t>(rng.below(5))}});
      rng.shuffle(std::span<std::string>(pool));
      ranked.push_back(list(qid, {pool.begin(), pool.begin() + 10}));
    }
    const GroundTruth gt(entries);
    const auto report = mar_at_k(ranked, gt, 10);
    double sum = 0.0;
    for (const auto& r : report.per_query) sum += r.recall;
    EXPECT_NEAR(report.mar, sum / static_cast<double>(nq), 1e-9);
    auto shuffled = ranked;
    rng.shuffle(std::span<RankedList>(shuffled));
    EXPECT_NEAR(mar_at_k(shuffled, gt, 10).mar, report.mar, 1e-12);
  }
}

TEST(MarAtK, Errors) {
  const GroundTruth gt(std::vector<GroundTruthEntry>{{"q1", {"a"}}});
  EXPECT_WR_ERROR(mar_at_k({list("q2", {"a"})}, gt, 10), MissingGroundTruth);
  EXPECT_WR_ERROR(mar_at_k({list("q1", {"a"}), list("q1", {"a"})}, gt, 10), DuplicateId);
  EXPECT_WR_ERROR(GroundTruth(std::vector<GroundTruthEntry>{{"q", {}}}), EmptyRelevantSet);
  EXPECT_WR_ERROR(GroundTruth({{"q", {"a"}}, {"q", {"b"}}}), DuplicateId);
  try {
    mar_at_k({list("q9", {"a"})}, gt, 10);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("q9"), std::string::npos);
  }
}

TEST(EvalReport, JsonShape) {
  const GroundTruth gt({{"q1", {"a", "b"}}, {"q2", {"c"}}});
  const auto report = mar_at_k({list("q1", {"a"}), list("q2", {"c"})}, gt, 10);
  const auto doc = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(doc["k"], 10);
  EXPECT_DOUBLE_EQ(doc["mar"].get<double>(), 0.75);
  EXPECT_EQ(doc["num_queries"], 2);
  EXPECT_EQ(doc["per_query"][1]["id"], "q2");
  EXPECT_DOUBLE_EQ(doc["per_query"][0]["recall"].get<double>(), 0.5);
}

TEST(GroundTruthTsv, RoundTripAndCorrupt) {
  const GroundTruth gt({{"q1", {"a", "b"}}, {"q2", {"c"}}});
  EXPECT_EQ(format_ground_truth(gt), "q1\ta,b\nq2\tc\n");
  const auto back = parse_ground_truth(format_ground_truth(gt));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(*back.find("q1"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(format_ground_truth(back), format_ground_truth(gt));

  weakrank::testing::TempDir dir;
  save_ground_truth(dir.file("gt.tsv"), gt);
  EXPECT_EQ(format_ground_truth(load_ground_truth(dir.file("gt.tsv"))), format_ground_truth(gt));

  EXPECT_WR_ERROR(parse_ground_truth("q1\n"), CorruptFile);
  EXPECT_WR_ERROR(parse_ground_truth("q1\t\n"), CorruptFile);
  EXPECT_WR_ERROR(parse_ground_truth("q1\ta\nq1\tb\n"), DuplicateId);
  EXPECT_WR_ERROR(load_ground_truth(dir.file("nope.tsv")), IoError);
}
