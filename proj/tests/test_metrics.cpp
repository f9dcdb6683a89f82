#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "regrec/error.hpp"
#include "regrec/metrics.hpp"

using namespace regrec;

namespace {

// Unit basis vectors per label; lets tests build exact cosines.
class FixedProvider final : public EmbeddingProvider {
 public:
  explicit FixedProvider(std::map<std::string, Eigen::VectorXd> table, double scale = 1.0)
      : table_(std::move(table)), scale_(scale) {}
  std::string name() const override { return "fixed"; }
  int dim() const override { return static_cast<int>(table_.begin()->second.size()); }
  Eigen::VectorXd embed(const std::string& text) const override { return scale_ * table_.at(text); }

 private:
  std::map<std::string, Eigen::VectorXd> table_;
  double scale_;
};

double set_iou(const std::string& a, const std::string& b) {
  auto words = [](std::string s) {
    for (char& c : s) {
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (c == '-' || c == '_') c = ' ';
    }
    std::set<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.insert(w);
    return out;
  };
  const auto p = words(a), g = words(b);
  std::vector<std::string> inter, uni;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(inter));
  std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(uni));
  return 100.0 * static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

std::string random_label(Xoshiro256& rng) {
  static const char* seps[] = {" ", "  ", "-", "_"};
  std::string s = oracle::random_word(rng, 4);
  const int extra = static_cast<int>(rng.below(3));
  for (int i = 0; i < extra; ++i) s += std::string(seps[rng.below(4)]) + oracle::random_word(rng, 4);
  if (rng.below(4) == 0) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

TEST(NormalizeText, LowercasesAndCollapses) {
  EXPECT_EQ(normalize_text("  Fire \t  TRUCK \n"), "fire truck");
  EXPECT_EQ(normalize_text(""), "");
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 14695981039346656037ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(HashEmbedding, MatchesIndependentCoding) {
  const HashEmbeddingProvider provider;
  for (const std::string s : {"fire truck", "truck", "traffic sign", "a"}) {
    const Eigen::VectorXd got = provider.embed(s), want = oracle::hash_embed(s);
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-15) << s;
    EXPECT_NEAR(got.norm(), 1.0, 1e-6);
  }
  EXPECT_TRUE(provider.embed("Fire  Truck ").isApprox(provider.embed("fire truck")));
  const double cos = oracle::hash_embed("fire truck").dot(oracle::hash_embed("truck"));
  EXPECT_NEAR(semantic_similarity("fire truck", "truck", provider), 100.0 * cos, 1e-9);
}

TEST(SemanticSimilarity, IdentityAndClip) {
  const HashEmbeddingProvider provider;
  EXPECT_NEAR(semantic_similarity("traffic sign", "traffic sign", provider), 100.0, 1e-9);
  FixedProvider fixed({{"a", Eigen::Vector2d(1, 0)}, {"b", Eigen::Vector2d(0, 1)}, {"c", Eigen::Vector2d(-1, 0)}});
  EXPECT_EQ(semantic_similarity("a", "b", fixed), 0.0);
  EXPECT_EQ(semantic_similarity("a", "c", fixed), 0.0);
  EXPECT_THROW(semantic_similarity("  ", "truck", provider), InputError);
}

TEST(SemanticIou, Examples) {
  EXPECT_EQ(semantic_iou("fire truck", "truck"), 50.0);
  EXPECT_EQ(semantic_iou("traffic sign", "traffic sign"), 100.0);
  EXPECT_EQ(semantic_iou("cat", "dog"), 0.0);
  EXPECT_EQ(semantic_iou("Fire-Truck", "fire_truck"), 100.0);
  EXPECT_THROW(semantic_iou(" - _ ", "dog"), InputError);
}

TEST(SemanticIou, FuzzSymmetricIdentityAndOracle) {
  Xoshiro256 rng(61);
  for (int i = 0; i < 1000; ++i) {
    const std::string a = random_label(rng), b = random_label(rng);
    ASSERT_EQ(semantic_iou(a, b), semantic_iou(b, a));
    ASSERT_EQ(semantic_iou(a, a), 100.0);
    ASSERT_DOUBLE_EQ(semantic_iou(a, b), set_iou(a, b)) << a << " | " << b;
  }
}

TEST(OpenVocab, ExactAndSingle) {
  const HashEmbeddingProvider provider;
  const std::vector<std::string> vocab{"cat", "fire truck", "traffic sign"};
  const auto c = open_vocab_classify("fire truck", vocab, provider);
  EXPECT_EQ(c.category, "fire truck");
  EXPECT_EQ(c.index, 1);
  EXPECT_NEAR(c.similarity, 100.0, 1e-9);
  EXPECT_EQ(open_vocab_classify("zebra", {"car"}, provider).category, "car");
  EXPECT_THROW(open_vocab_classify("zebra", {}, provider), InputError);
}

TEST(OpenVocab, TiesGoToLowestIndex) {
  FixedProvider fixed({{"q", Eigen::Vector2d(1, 1).normalized()},
                       {"x", Eigen::Vector2d(1, 0)},
                       {"y", Eigen::Vector2d(0, 1)}});
  EXPECT_EQ(open_vocab_classify("q", {"y", "x"}, fixed).index, 0);
  EXPECT_EQ(open_vocab_classify("q", {"x", "y"}, fixed).index, 0);
}

TEST(OpenVocab, BruteForceAndScaleInvariance) {
  Xoshiro256 rng(62);
  const HashEmbeddingProvider provider;
  for (int t = 0; t < 100; ++t) {
    std::vector<std::string> vocab;
    const int n = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < n; ++i) vocab.push_back(random_label(rng));
    const std::string pred = random_label(rng);
    int best = 0;
    double best_cos = -2;
    const Eigen::VectorXd p = oracle::hash_embed(normalize_text(pred));
    for (int i = 0; i < n; ++i) {
      const double c = p.dot(oracle::hash_embed(normalize_text(vocab[static_cast<std::size_t>(i)])));
      if (c > best_cos) best_cos = c, best = i;
    }
    ASSERT_EQ(open_vocab_classify(pred, vocab, provider).index, best);

    std::map<std::string, Eigen::VectorXd> table;
    for (const auto& s : vocab) table[s] = provider.embed(s);
    table[pred] = provider.embed(pred);
    const FixedProvider unit(table), scaled(table, 7.5);
    ASSERT_EQ(open_vocab_classify(pred, vocab, unit).index, open_vocab_classify(pred, vocab, scaled).index);
  }
}

TEST(Evaluate, ExactMatches) {
  const HashEmbeddingProvider provider;
  const std::vector<std::string> vocab{"cat", "dog"};
  const auto r = evaluate({{"cat", "cat", vocab}, {"dog", "dog", vocab}}, provider);
  EXPECT_NEAR(r.semantic_similarity, 100.0, 1e-9);
  EXPECT_EQ(r.semantic_iou, 100.0);
  ASSERT_TRUE(r.mask_acc.has_value());
  EXPECT_EQ(*r.mask_acc, 1.0);
  EXPECT_EQ(r.n, 2);
}

TEST(Evaluate, HalfDisjointAndNoVocabulary) {
  const HashEmbeddingProvider provider;
  const auto r = evaluate({{"cat", "cat", std::nullopt}, {"cat", "dog", std::nullopt}}, provider);
  EXPECT_EQ(r.semantic_iou, 50.0);
  EXPECT_FALSE(r.mask_acc.has_value());
  EXPECT_EQ(r.to_json().find("mask_acc"), std::string::npos);
  EXPECT_THROW(evaluate({}, provider), InputError);
}

TEST(Evaluate, MatchesPerInstanceRecomputationAndPermutation) {
  Xoshiro256 rng(63);
  const HashEmbeddingProvider provider;
  std::vector<EvalItem> items;
  double sim = 0, iou = 0;
  for (int i = 0; i < 50; ++i) {
    EvalItem it{random_label(rng), random_label(rng), std::nullopt};
    const double c = oracle::hash_embed(normalize_text(it.pred)).dot(oracle::hash_embed(normalize_text(it.gold)));
    sim += 100.0 * std::max(0.0, c);
    iou += set_iou(it.pred, it.gold);
    items.push_back(it);
  }
  const auto r = evaluate(items, provider);
  EXPECT_NEAR(r.semantic_similarity, sim / 50, 1e-9);
  EXPECT_NEAR(r.semantic_iou, iou / 50, 1e-9);
  std::reverse(items.begin(), items.end());
  const auto back = evaluate(items, provider);
  EXPECT_NEAR(back.semantic_similarity, r.semantic_similarity, 1e-9);
  EXPECT_NEAR(back.semantic_iou, r.semantic_iou, 1e-9);
}

TEST(TableProvider, RoundTripAndMissingKey) {
  Eigen::MatrixXd v(2, 3);
  v << 3, 0, 4, 0, 2, 0;
  const TableEmbeddingProvider table({"Fire Truck", "cat"}, v);
  EXPECT_NEAR(table.embed("fire  truck")(2), 0.8, 1e-12);
  EXPECT_THROW(table.embed("dog"), KeyError);
  const auto path = (std::filesystem::temp_directory_path() / "regrec_table.emb").string();
  table.save(path);
  const auto back = TableEmbeddingProvider::load(path);
  EXPECT_EQ(back.dim(), 3);
  EXPECT_NEAR((back.embed("cat") - table.embed("cat")).norm(), 0.0, 1e-7);
}

TEST(Predictions, ParseAndErrors) {
  const auto p = parse_predictions(
      "{\"image_id\":\"a\",\"mask_index\":0,\"pred\":\"cat\",\"gold\":\"cat\"}\n\n"
      "{\"image_id\":\"a\",\"mask_index\":1,\"pred\":\"dog\",\"gold\":\"cat\"}\n");
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[1].mask_index, 1);
  try {
    parse_predictions("{\"image_id\":\"a\",\"mask_index\":0,\"pred\":\"x\",\"gold\":\"y\"}\n{broken\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
