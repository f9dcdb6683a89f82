#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "regrec/attnmask.hpp"
#include "regrec/maskio.hpp"

namespace regrec {

/// Model dimensions the cost model and the bench work from.
struct BenchProfile {
  std::string name;
  // encoder
  int patch_side = 28;
  int grid_side = 16;
  int channels = 3;
  int enc_dim = 32;
  // decoder
  int dim = 32;
  int heads = 2;
  int layers = 2;
  int ffn = 128;
  int vocab = 16;
  // sequence
  int text_len = 1;
  int output_len = 8;

  int input_side() const { return patch_side * grid_side; }

  /// Same defaults as the library: encoder dim 32, decoder dim 32 x 2 layers.
  static BenchProfile toy();
  /// Decoder much wider than the encoder, as in a language-model backbone
  /// fed by a small vision tower. The bench default.
  static BenchProfile decoder_dominated();
  static BenchProfile by_name(const std::string& name);
};

/// Analytic FLOPs; every matmul of (m x k)(k x n) costs 2mnk.
struct CostBreakdown {
  double encoder = 0;      // (K + 1) patch-projection passes
  double crop_resize = 0;  // bilinear resampling, 8 flops per output sample
  double adapter = 0;      // injected feature vectors -> decoder width
  double projection = 0;   // q, k, v, o
  double ffn = 0;
  double attention = 0;  // 2 * visible pairs * dim per layer
  double head = 0;

  double encoder_total() const { return encoder + crop_resize; }
  double decoder_total() const { return adapter + projection + ffn + attention + head; }
  double total() const { return encoder_total() + decoder_total(); }
};

double encoder_flops_per_crop(const BenchProfile& profile);
double crop_resize_flops(const BenchProfile& profile);

/// Encoder cost = K crops + 1 global view; the decoder runs once over the
/// whole multi-instance sequence, attention counted over visible pairs only.
CostBreakdown estimate_cost(const SequenceLayout& layout, long long visible_pairs, int k, const BenchProfile& profile);
CostBreakdown estimate_cost(const SequenceLayout& layout, const AttentionMaskMatrix& mask, int k,
                            const BenchProfile& profile);

/// Masks of exactly `tokens` active grid cells (at the profile's grid side and
/// context scale 2) scattered over a `width` x `height` canvas.
std::vector<BinaryMask> synthesize_masks(int count, int width, int height, int tokens, int grid_side,
                                         std::uint64_t seed);

struct ScalingRow {
  int k = 0;
  int sequence_length = 0;
  int mask_tokens = 0;
  long long visible_pairs = 0;
  double total_flops = 0;
  double encoder_share = 0;
  double decoder_share = 0;
  double comparator_flops = 0;
  double wall_time_ms = 0;
};

struct ScalingReport {
  std::string profile;
  std::vector<ScalingRow> rows;
  double growth_factor = 1.0;             // total(K_max) / total(K_min)
  double comparator_growth_factor = 1.0;  // K_max * total(1) / total(1)

  std::string to_json() const;
  std::string to_csv() const;
};

struct BenchOptions {
  int repetitions = 5;
  bool timed = true;  // false: build once, report wall_time_ms = 0
  bool parallel = false;
  std::uint64_t seed = 0;
  int image_side = 256;
};

/// For each K: the first K masks go through build_prompt_batch and the full
/// cascade mask is built; both are timed (median over repetitions) and the
/// FLOP model is evaluated on the resulting layout.
ScalingReport run_scaling_bench(const std::vector<int>& k_values, const std::vector<BinaryMask>& masks,
                                const BenchProfile& profile, const BenchOptions& options = {});

// ---------------------------------------------------------------- filter pipeline

inline constexpr int kDefaultHeadThreshold = 100;

std::string hallucination_question(const std::string& class_name);

/// Answers a yes/no question about one record. Throwing signals a failed query.
class HallucinationOracle {
 public:
  virtual ~HallucinationOracle() = default;
  virtual std::string ask(const MaskRecord& record, std::size_t record_index, const std::string& question) = 0;
};

/// Replies from a table keyed by record index; anything else gets the default.
/// The reply "error" makes the query throw.
class ScriptedOracle final : public HallucinationOracle {
 public:
  explicit ScriptedOracle(std::string default_answer = "yes", std::map<std::size_t, std::string> answers = {});
  /// {"default": "yes", "answers": {"3": "no", ...}}
  static ScriptedOracle from_json(const std::string& json_text);

  std::string ask(const MaskRecord& record, std::size_t record_index, const std::string& question) override;
  const std::vector<std::string>& questions() const { return questions_; }

 private:
  std::string default_answer_;
  std::map<std::size_t, std::string> answers_;
  std::vector<std::string> questions_;
};

struct PipelineEntry {
  std::size_t index = 0;  // position in the input
  MaskRecord record;
  bool queried = false;
  bool flagged = false;
  std::string error;
};

struct PipelineReport {
  std::size_t input = 0;
  std::size_t stage1_kept = 0;
  std::size_t stage1_dropped = 0;
  std::vector<std::string> head_categories;
  std::size_t queried = 0;
  std::size_t stage2_dropped = 0;
  std::size_t flagged = 0;
  std::vector<PipelineEntry> kept;
  std::vector<std::size_t> stage2_dropped_indices;

  std::string to_json() const;
};

PipelineReport run_filter_pipeline(const std::vector<MaskRecord>& records,
                                   const std::map<std::string, double>& image_area_by_id, HallucinationOracle& oracle,
                                   double min_ratio = kDefaultMinAreaRatio, int head_threshold = kDefaultHeadThreshold);
PipelineReport run_filter_pipeline(const std::string& records_path,
                                   const std::map<std::string, double>& image_area_by_id, HallucinationOracle& oracle,
                                   double min_ratio = kDefaultMinAreaRatio, int head_threshold = kDefaultHeadThreshold);

}  // namespace regrec
