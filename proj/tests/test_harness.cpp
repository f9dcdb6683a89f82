#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "regrec/error.hpp"
#include "regrec/harness.hpp"
#include "regrec/prompt.hpp"

using namespace regrec;

namespace {

const char* kFig4 = "image:2 text:1 mask0:2 sep:1 mask1:2 out0:1 sep:1 out1:1";

MaskRecord record(const std::string& image, const std::string& label, int bits) {
  std::vector<std::uint8_t> m(64, 0);
  for (int i = 0; i < bits; ++i) m[static_cast<std::size_t>(i)] = 1;
  return {BinaryMask(8, 8, m), image, label};
}

}  // namespace

TEST(CostModel, Fig4VisiblePairsAreOraclePopcount) {
  const auto layout = SequenceLayout::parse(kFig4);
  const auto mask = build_cascade_mask(layout, CascadeConfig::full());
  const long long pop = oracle::cascade(layout, CascadeConfig::full()).count();
  EXPECT_EQ(mask.count(), pop);
  const auto p = BenchProfile::toy();
  EXPECT_EQ(estimate_cost(layout, mask, 2, p).attention, p.layers * 2.0 * static_cast<double>(pop) * p.dim);
}

TEST(CostModel, ComponentsPositiveAndPerCropTerms) {
  const auto p = BenchProfile::toy();
  const auto layout = SequenceLayout::parse(kFig4);
  const auto c = estimate_cost(layout, build_cascade_mask(layout, CascadeConfig::full()), 2, p);
  for (double v : {c.encoder, c.crop_resize, c.adapter, c.projection, c.ffn, c.attention, c.head}) EXPECT_GT(v, 0);
  EXPECT_EQ(encoder_flops_per_crop(p), 256.0 * 2 * (28 * 28 * 3) * 32);
  EXPECT_EQ(crop_resize_flops(p), 8.0 * 448 * 448 * 3);
  EXPECT_EQ(c.encoder, 3 * encoder_flops_per_crop(p));
  EXPECT_EQ(c.total(), c.encoder_total() + c.decoder_total());
}

TEST(CostModel, DoublingDimQuadruplesProjection) {
  auto p = BenchProfile::toy();
  const auto layout = SequenceLayout::parse(kFig4);
  const double a = estimate_cost(layout, 40, 2, p).projection;
  p.dim *= 2;
  EXPECT_EQ(estimate_cost(layout, 40, 2, p).projection, 4 * a);
}

TEST(CostModel, AttentionUsesVisiblePairsNotSquare) {
  const auto p = BenchProfile::toy();
  const auto layout = SequenceLayout::parse(kFig4);
  const auto sparse = estimate_cost(layout, build_cascade_mask(layout, CascadeConfig::full()), 2, p);
  const auto causal = estimate_cost(layout, build_cascade_mask(layout, CascadeConfig::causal()), 2, p);
  EXPECT_LT(sparse.attention, causal.attention);
  EXPECT_EQ(sparse.projection, causal.projection);
}

TEST(SynthesizeMasks, ExactTokenCount) {
  const auto masks = synthesize_masks(20, 256, 256, 27, 16, 3);
  const auto enc = EncoderParams::random(28, 16, 3, 8, 1);
  const RasterImage img(256, 256, 3);
  for (std::size_t i = 0; i < masks.size(); ++i) EXPECT_EQ(mask2token(img, masks[i], enc).count(), 27);
  EXPECT_THROW(synthesize_masks(1, 256, 256, 65, 16, 3), ValueError);
}

TEST(ScalingBench, SingleKHasGrowthOne) {
  const auto masks = synthesize_masks(1, 256, 256, 27, 16, 4);
  BenchOptions o;
  o.timed = false;
  const auto r = run_scaling_bench({1}, masks, BenchProfile::toy(), o);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.growth_factor, 1.0);
  EXPECT_EQ(r.comparator_growth_factor, 1.0);
}

TEST(ScalingBench, DecoderDominatedGrowthBelowFour) {
  const auto masks = synthesize_masks(32, 256, 256, 27, 16, 5);
  BenchOptions o;
  o.timed = false;
  const auto r = run_scaling_bench({1, 2, 4, 8, 16, 32}, masks, BenchProfile::decoder_dominated(), o);
  EXPECT_LT(r.growth_factor, 4.0);
  EXPECT_EQ(r.comparator_growth_factor, 32.0);
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    EXPECT_GE(r.rows[i].total_flops, r.rows[i - 1].total_flops);
    EXPECT_EQ(r.rows[i].comparator_flops, r.rows[i].k * r.rows[0].total_flops);
  }
  EXPECT_EQ(r.rows.back().mask_tokens, 32 * 27);
}

TEST(ScalingBench, ToySublinear) {
  const auto masks = synthesize_masks(32, 256, 256, 27, 16, 6);
  BenchOptions o;
  o.timed = false;
  const auto r = run_scaling_bench({1, 2, 4, 8, 16, 32}, masks, BenchProfile::toy(), o);
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    EXPECT_LT(r.rows[i].total_flops / r.rows[0].total_flops, r.rows[i].k);
  }
}

TEST(ScalingBench, ReportsAndTiming) {
  const auto masks = synthesize_masks(2, 256, 256, 27, 16, 7);
  BenchOptions o;
  o.repetitions = 2;
  const auto r = run_scaling_bench({1, 2}, masks, BenchProfile::toy(), o);
  EXPECT_GT(r.rows[1].wall_time_ms, 0.0);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["rows"].size(), 2u);
  EXPECT_EQ(r.to_csv().substr(0, r.to_csv().find('\n')),
            "K,flops,time_ms,comparator_flops,sequence_length,encoder_share,decoder_share");
}

TEST(ScalingBench, Errors) {
  const auto masks = synthesize_masks(2, 256, 256, 27, 16, 8);
  EXPECT_THROW(run_scaling_bench({1, 4}, masks, BenchProfile::toy()), InputError);
  EXPECT_THROW(run_scaling_bench({}, masks, BenchProfile::toy()), InputError);
  EXPECT_THROW(BenchProfile::by_name("huge"), ConfigError);
}

TEST(Pipeline, QuestionTemplate) {
  EXPECT_EQ(hallucination_question("fire truck"),
            "Is the area outlined by the red contour and covered by the red mask in the image fire truck? Please answer yes or no.");
}

TEST(Pipeline, AlwaysYesDropsNothing) {
  std::vector<MaskRecord> recs;
  for (int i = 0; i < 5; ++i) recs.push_back(record("img", "cat", 4));
  ScriptedOracle yes;
  const auto r = run_filter_pipeline(recs, {{"img", 64.0}}, yes, 0.001, 3);
  EXPECT_EQ(r.stage2_dropped, 0u);
  EXPECT_EQ(r.queried, 5u);
  EXPECT_EQ(r.kept.size(), 5u);
}

TEST(Pipeline, ScriptedNoDropsExactlyThatRecord) {
  std::vector<MaskRecord> recs;
  for (int i = 0; i < 5; ++i) recs.push_back(record("img", "cat", 4));
  ScriptedOracle oracle("yes", {{2, "no"}});
  const auto r = run_filter_pipeline(recs, {{"img", 64.0}}, oracle, 0.001, 3);
  EXPECT_EQ(r.stage2_dropped_indices, (std::vector<std::size_t>{2}));
  EXPECT_EQ(r.kept.size(), 4u);
}

TEST(Pipeline, OracleErrorIsFlaggedAndRetained) {
  std::vector<MaskRecord> recs{record("img", "cat", 4), record("img", "cat", 4)};
  ScriptedOracle oracle("yes", {{1, "error"}});
  const auto r = run_filter_pipeline(recs, {{"img", 64.0}}, oracle, 0.001, 1);
  ASSERT_EQ(r.kept.size(), 2u);
  EXPECT_TRUE(r.kept[1].flagged);
  EXPECT_FALSE(r.kept[1].error.empty());
  EXPECT_EQ(r.flagged, 1u);
}

TEST(Pipeline, ZipfHeadTailSplit) {
  std::vector<MaskRecord> recs;
  std::map<std::string, int> counts;
  for (int c = 0; c < 10; ++c) {
    const int n = 200 / (c + 1);
    for (int i = 0; i < n; ++i) recs.push_back(record("img", "class" + std::to_string(c), 4));
  }
  recs.push_back(record("img", "class0", 1));  // below the ratio: dropped in stage 1
  std::map<std::string, double> areas{{"img", 64.0 * 100000}};
  // Recount survivors independently: only the 1-bit record falls below 1e-5.
  for (std::size_t i = 0; i + 1 < recs.size(); ++i) counts[*recs[i].label]++;
  std::size_t expect_queried = 0;
  std::vector<std::string> heads;
  for (const auto& [label, n] : counts) {
    if (n >= 50) heads.push_back(label), expect_queried += static_cast<std::size_t>(n);
  }
  ScriptedOracle oracle;
  const auto r = run_filter_pipeline(recs, areas, oracle, 4.0 / (64.0 * 100000), 50);
  EXPECT_EQ(r.stage1_dropped, 1u);
  EXPECT_EQ(r.head_categories, heads);
  EXPECT_EQ(r.queried, expect_queried);
  EXPECT_EQ(oracle.questions().size(), expect_queried);
}

TEST(Pipeline, StageOneIdempotent) {
  std::vector<MaskRecord> recs{record("a", "cat", 1), record("a", "cat", 8), record("b", "dog", 2)};
  const std::map<std::string, double> areas{{"a", 1000.0}, {"b", 1000.0}};
  const auto once = area_ratio_filter(recs, areas, 0.002);
  const auto twice = area_ratio_filter(once.kept, areas, 0.002);
  EXPECT_EQ(twice.kept.size(), once.kept.size());
  EXPECT_TRUE(twice.dropped.empty());
}

TEST(ScriptedOracle, FromJson) {
  auto o = ScriptedOracle::from_json(R"({"default":"no","answers":{"1":"yes"}})");
  const auto r = record("a", "cat", 4);
  EXPECT_EQ(o.ask(r, 0, "q"), "no");
  EXPECT_EQ(o.ask(r, 1, "q"), "yes");
  EXPECT_THROW(ScriptedOracle::from_json("[1]"), ParseError);
}
