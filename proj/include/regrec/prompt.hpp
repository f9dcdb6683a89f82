#pragma once

#include <string>
#include <utility>
#include <vector>

#include "regrec/encoder.hpp"
#include "regrec/region.hpp"

namespace regrec {

/// Tokens selected from one mask crop's feature grid.
struct MaskTokenSet {
  RowMatrixXf tokens;                          // count x dim
  std::vector<std::pair<int, int>> grid_indices;  // (row, col), row-major increasing
  int mask_index = 0;

  int count() const { return static_cast<int>(tokens.rows()); }
};

inline constexpr int kDefaultMaxMasks = 30;

struct PromptBatch {
  FeatureGrid image_tokens;
  std::vector<MaskTokenSet> mask_token_sets;
  double context_scale = kDefaultContextScale;
};

/// Token counts of the canonical decode layout: image, text, then each mask
/// segment followed by a separator, then one output chunk per object.
struct SequenceBudget {
  int image = 0;
  int text = 0;
  std::vector<int> mask;
  int separators = 0;
  std::vector<int> output;
  int total = 0;
};

inline constexpr int kDefaultOutputSlots = 8;

/// tight_bbox -> context window -> resize to the encoder input side -> encode
/// -> grid of the mask inside the window -> gather active cells row-major.
MaskTokenSet mask2token(const RasterImage& image, const BinaryMask& mask, const EncoderParams& params,
                        double scale = kDefaultContextScale, int mask_index = 0);

/// Global view: square stretch of the whole image to the encoder input side.
FeatureGrid encode_global(const RasterImage& image, const EncoderParams& params);

/// Encodes the global image once and every mask independently. With
/// `parallel` the masks are tokenized on worker threads; results are identical.
PromptBatch build_prompt_batch(const RasterImage& image, const std::vector<BinaryMask>& masks,
                               const EncoderParams& params, double scale = kDefaultContextScale,
                               int max_masks = kDefaultMaxMasks, bool parallel = false);

SequenceBudget token_budget(const PromptBatch& batch, int text_len, int output_len = kDefaultOutputSlots);

/// JSON metadata ({"mask_index","count","dim","grid_indices","blob"}) plus a
/// "TOK0" sidecar blob holding the token matrix.
void save_mask_token_set(const MaskTokenSet& set, const std::string& json_path, const std::string& blob_path);
MaskTokenSet load_mask_token_set(const std::string& json_path);

}  // namespace regrec
