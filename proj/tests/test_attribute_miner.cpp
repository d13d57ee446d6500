#include <gtest/gtest.h>

#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "weakrank/attribute_miner.hpp"
#include "weakrank/rng.hpp"

using namespace weakrank;

namespace {

std::vector<std::string> kToy = {"red apple phone", "red case", "apple case"};

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

// Random titles over a small alphabet with mixed case and odd whitespace.
std::vector<std::string> random_titles(Rng& rng, std::size_t n) {
  static const char* words[] = {"Red", "apple", "APPLE", "case", "x", "pro", "13", "blue", "Case", "max"};
  static const char* gaps[] = {" ", "  ", "\t", " \n", "\xC2\xA0", "\xE3\x80\x80"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    const std::size_t len = rng.below(6);
    for (std::size_t j = 0; j < len; ++j) {
      if (j || rng.bernoulli(0.3)) t += gaps[rng.below(6)];
      t += words[rng.below(10)];
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("Red  APPLE apple"), (std::vector<std::string>{"red", "apple", "apple"}));
  EXPECT_EQ(tokenize("iphone 13 pro"), (std::vector<std::string>{"iphone", "13", "pro"}));
}

TEST(Tokenize, UnicodeWhitespaceAndNoLowercase) {
  // NBSP, ideographic space and a tab separate tokens; punctuation stays.
  EXPECT_EQ(tokenize("a\xC2\xA0" "b\xE3\x80\x80" "c\td,"), (std::vector<std::string>{"a", "b", "c", "d,"}));
  EXPECT_EQ(tokenize("  Red APPLE ", false), (std::vector<std::string>{"Red", "APPLE"}));
  // Non-ASCII letters pass through untouched.
  EXPECT_EQ(tokenize("\xC3\x89T\xC3\x89"), (std::vector<std::string>{"\xC3\x89t\xC3\x89"}));
}

TEST(Tokenize, JoinIdempotenceProperty) {
  Rng rng(11);
  for (const auto& title : random_titles(rng, 500)) {
    const auto once = tokenize(title);
    EXPECT_EQ(tokenize(join(once)), once) << title;
  }
}

TEST(BuildVocab, ToyExample) {
  const auto vocab = build_vocab(kToy, 1);
  const std::vector<VocabEntry> want = {{"apple", 2, 0}, {"case", 2, 1}, {"red", 2, 2}};
  EXPECT_EQ(vocab.entries(), want);
  EXPECT_EQ(vocab.min_count(), 1u);
}

TEST(BuildVocab, SingleTokenAndEmpty) {
  const std::vector<std::string> a = {"a a a"};
  const auto vocab = build_vocab(a, 2);
  ASSERT_EQ(vocab.size(), 1u);
  EXPECT_EQ(vocab.entries()[0], (VocabEntry{"a", 3, 0}));

  const std::vector<std::string> xy = {"x y"};
  EXPECT_WR_ERROR(build_vocab(xy, 5), EmptyVocab);
  EXPECT_WR_ERROR(build_vocab(xy, 0), InvalidArgument);
}

TEST(BuildVocab, ThresholdIsStrict) {
  const std::vector<std::string> t = {"a a b"};
  const auto vocab = build_vocab(t, 1);
  ASSERT_EQ(vocab.size(), 1u);
  EXPECT_EQ(vocab.entries()[0].token, "a");
}

TEST(BuildVocab, CountTitlesOption) {
  const std::vector<std::string> t = {"a a a", "b", "b"};
  MinerOptions per_title;
  per_title.count_titles = true;
  const auto vocab = build_vocab(t, 1, per_title);
  ASSERT_EQ(vocab.size(), 1u);
  EXPECT_EQ(vocab.entries()[0], (VocabEntry{"b", 2, 0}));
}

TEST(BuildVocab, InvariantsAndWorkerIndependence) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto titles = random_titles(rng, 200);
    const auto one = build_vocab(titles, 3, {}, 1);
    const auto four = build_vocab(titles, 3, {}, 4);
    EXPECT_EQ(one.to_json(), four.to_json());
    const auto& e = one.entries();
    for (std::size_t i = 0; i < e.size(); ++i) {
      EXPECT_EQ(e[i].id, i);
      EXPECT_GT(e[i].count, 3u);
      if (i) EXPECT_TRUE(e[i - 1].count > e[i].count || (e[i - 1].count == e[i].count && e[i - 1].token < e[i].token));
    }
  }
}

TEST(BuildVocab, ThresholdMonotonicityProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto titles = random_titles(rng, 100);
    for (std::uint64_t a = 1; a < 12; ++a) {
      for (std::uint64_t b = a; b < 12; ++b) {
        std::set<std::string> low;
        std::set<std::string> high;
        try {
          const auto vocab = build_vocab(titles, a);
          for (const auto& e : vocab.entries()) low.insert(e.token);
        } catch (const Error&) {
        }
        try {
          const auto vocab = build_vocab(titles, b);
          for (const auto& e : vocab.entries()) high.insert(e.token);
        } catch (const Error&) {
        }
        for (const auto& t : high) EXPECT_TRUE(low.count(t)) << t << " a=" << a << " b=" << b;
      }
    }
  }
}

TEST(BuildVocab, DeterministicJson) {
  const auto a = build_vocab(kToy, 1).to_json();
  const auto b = build_vocab(kToy, 1).to_json();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.back(), '\n');
}

TEST(EncodeItem, Examples) {
  const auto vocab = build_vocab(kToy, 1);
  const auto i1 = encode_item("i1", "red APPLE apple", vocab);
  ASSERT_TRUE(i1);
  EXPECT_EQ(i1->attr_ids, (std::vector<AttrId>{0, 2}));
  EXPECT_EQ(i1->k(), 2u);
  EXPECT_FALSE(encode_item("i2", "zzz", vocab));
  const auto i3 = encode_item("i3", "case", vocab);
  ASSERT_TRUE(i3);
  EXPECT_EQ(i3->attr_ids, (std::vector<AttrId>{1}));
}

TEST(EncodeCorpus, CountsDropped) {
  const auto vocab = build_vocab(kToy, 1);
  const std::vector<CorpusRecord> corpus = {{"a", "red"}, {"b", "nothing here"}, {"c", "case apple"}};
  const auto enc = encode_corpus(corpus, vocab);
  EXPECT_EQ(enc.dropped, 1u);
  ASSERT_EQ(enc.items.size(), 2u);
  EXPECT_EQ(enc.items[1].attr_ids, (std::vector<AttrId>{0, 1}));
}

TEST(SoftTargets, Examples) {
  const auto vocab = build_vocab(kToy, 1);
  const auto one = build_soft_targets({{"x", {0, 2}}}, vocab);
  EXPECT_EQ(one.dense_row(0), (std::vector<double>{0.5, 0.0, 0.5}));
  const auto hot = build_soft_targets({{"x", {1}}}, vocab);
  EXPECT_EQ(hot.dense_row(0), (std::vector<double>{0.0, 1.0, 0.0}));
  const auto two = build_soft_targets({{"a", {0}}, {"b", {0, 1, 2}}}, vocab);
  EXPECT_EQ(two.dense_row(0), (std::vector<double>{1.0, 0.0, 0.0}));
  for (const double v : two.dense_row(1)) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(SoftTargets, Errors) {
  const auto vocab = build_vocab(kToy, 1);
  EXPECT_WR_ERROR(build_soft_targets({{"x", {3}}}, vocab), InvalidAttributeId);
  EXPECT_WR_ERROR(build_soft_targets({{"x", {}}}, vocab), InvalidArgument);
  EXPECT_WR_ERROR(build_soft_targets({{"x", {2, 1}}}, vocab), InvalidArgument);
}

TEST(SoftTargets, RowsSumToOneProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng.below(40);
    std::set<AttrId> ids;
    const std::size_t k = 1 + rng.below(t);
    while (ids.size() < k) ids.insert(static_cast<AttrId>(rng.below(t)));
    const SoftTargets st({{"x", std::vector<AttrId>(ids.begin(), ids.end())}}, t);
    double sum = 0.0;
    for (const double v : st.dense_row(0)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Histogram, Examples) {
  const auto vocab = build_vocab(kToy, 1);
  const auto top2 = histogram(vocab, 2);
  EXPECT_EQ(top2, (std::vector<std::pair<std::string, std::uint64_t>>{{"apple", 2}, {"case", 2}}));
  EXPECT_EQ(histogram(vocab, 100).size(), 3u);
  const std::vector<std::string> a = {"a a a"};
  const auto single = histogram(build_vocab(a, 2), 1);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].first, "a");
  EXPECT_EQ(histogram_csv(top2), "rank,token,count\n1,apple,2\n2,case,2\n");
  EXPECT_WR_ERROR(histogram(vocab, 0), InvalidArgument);
}

TEST(Formats, VocabJsonRoundTrip) {
  const auto vocab = build_vocab(kToy, 1);
  const auto back = AttributeVocab::from_json(vocab.to_json());
  EXPECT_EQ(back.entries(), vocab.entries());
  EXPECT_EQ(back.to_json(), vocab.to_json());
  EXPECT_EQ(*back.find("red"), 2u);

  weakrank::testing::TempDir dir;
  vocab.save(dir.file("v.json"));
  EXPECT_EQ(AttributeVocab::load(dir.file("v.json")).entries(), vocab.entries());
}

TEST(Formats, VocabJsonCorrupt) {
  EXPECT_WR_ERROR(AttributeVocab::from_json("{not json"), CorruptFile);
  EXPECT_WR_ERROR(AttributeVocab::from_json("{\"a\":1}"), CorruptFile);
  EXPECT_WR_ERROR(AttributeVocab::from_json("[{\"token\":\"a\"}]"), CorruptFile);
  EXPECT_WR_ERROR(AttributeVocab::from_json("[{\"token\":\"a\",\"count\":2,\"id\":1}]"), CorruptFile);
  EXPECT_WR_ERROR(AttributeVocab::from_json("[]"), EmptyVocab);
}

TEST(Formats, TargetsRoundTrip) {
  const std::vector<ItemAttributes> items = {{"a", {0, 5, 17}}, {"b", {2}}, {"c d", {1, 2}}};
  const auto text = format_id_lists(items);
  EXPECT_EQ(text, "a\t0,5,17\nb\t2\nc d\t1,2\n");
  EXPECT_EQ(parse_targets(text), items);
  weakrank::testing::TempDir dir;
  save_targets(dir.file("t.tsv"), items);
  EXPECT_EQ(load_targets(dir.file("t.tsv")), items);
}

TEST(Formats, TargetsCorrupt) {
  EXPECT_WR_ERROR(parse_targets("a 1,2\n"), CorruptFile);
  EXPECT_WR_ERROR(parse_targets("a\t1,x\n"), CorruptFile);
  EXPECT_WR_ERROR(parse_targets("a\t2,1\n"), CorruptFile);
  EXPECT_WR_ERROR(parse_targets("a\t1,,2\n"), CorruptFile);
}

TEST(Formats, CorpusRoundTrip) {
  const std::vector<CorpusRecord> c = {{"i1", "Red apple"}, {"i2", ""}, {"i3", "tab\tin title"}};
  const auto back = parse_corpus(format_corpus(c));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[2].title, "tab\tin title");
  EXPECT_EQ(back[1].title, "");
  EXPECT_WR_ERROR(parse_corpus("no tab here\n"), CorruptFile);
}
