#include "regrec/prompt.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <nlohmann/json.hpp>

#include "regrec/error.hpp"

namespace regrec {

using nlohmann::json;

MaskTokenSet mask2token(const RasterImage& image, const BinaryMask& mask, const EncoderParams& params,
                        double scale, int mask_index) {
  if (image.width() != mask.width() || image.height() != mask.height()) {
    throw ShapeError("mask and image dimensions differ");
  }
  const BBox box = tight_bbox(mask);
  const CropWindow window = context_crop_window(box, scale, image.width(), image.height());
  const RasterImage crop = extract_and_resize(image, window, params.input_side());
  const FeatureGrid features = encode(crop, params);
  const GridMask grid = downsample_to_grid(mask, window, features.rows, features.cols);

  MaskTokenSet set;
  set.mask_index = mask_index;
  set.tokens.resize(static_cast<Eigen::Index>(grid.count()), features.dim());
  Eigen::Index k = 0;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (!grid.at(r, c)) continue;
      set.tokens.row(k++) = features.cell(r, c);
      set.grid_indices.emplace_back(r, c);
    }
  }
  return set;
}

FeatureGrid encode_global(const RasterImage& image, const EncoderParams& params) {
  const int side = params.input_side();
  return encode(resample(image, 0.0, 0.0, image.width(), image.height(), side, side), params);
}

PromptBatch build_prompt_batch(const RasterImage& image, const std::vector<BinaryMask>& masks,
                               const EncoderParams& params, double scale, int max_masks, bool parallel) {
  if (masks.empty()) throw InputError("at least one mask is required");
  if (static_cast<int>(masks.size()) > max_masks) {
    throw CapacityError(std::to_string(masks.size()) + " masks exceed the per-sample limit of " +
                        std::to_string(max_masks));
  }
  PromptBatch batch;
  batch.context_scale = scale;
  batch.image_tokens = encode_global(image, params);
  batch.mask_token_sets.resize(masks.size());
  if (parallel) {
    std::vector<std::future<MaskTokenSet>> jobs;
    jobs.reserve(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
      jobs.push_back(std::async(std::launch::async, [&, i] {
        return mask2token(image, masks[i], params, scale, static_cast<int>(i));
      }));
    }
    for (std::size_t i = 0; i < masks.size(); ++i) batch.mask_token_sets[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < masks.size(); ++i) {
      batch.mask_token_sets[i] = mask2token(image, masks[i], params, scale, static_cast<int>(i));
    }
  }
  return batch;
}

SequenceBudget token_budget(const PromptBatch& batch, int text_len, int output_len) {
  if (text_len < 0 || output_len < 0) throw ValueError("token counts must be non-negative");
  SequenceBudget budget;
  budget.image = static_cast<int>(batch.image_tokens.values.rows());
  budget.text = text_len;
  budget.total = budget.image + budget.text;
  for (const auto& set : batch.mask_token_sets) {
    budget.mask.push_back(set.count());
    budget.output.push_back(output_len);
    budget.separators += 1;
    budget.total += set.count() + 1 + output_len;
  }
  return budget;
}

void save_mask_token_set(const MaskTokenSet& set, const std::string& json_path, const std::string& blob_path) {
  write_blob_file(blob_path, "TOK0", set.tokens);
  json indices = json::array();
  for (const auto& [r, c] : set.grid_indices) indices.push_back({r, c});
  const json meta{{"mask_index", set.mask_index},
                  {"count", set.count()},
                  {"dim", set.tokens.cols()},
                  {"grid_indices", indices},
                  {"blob", std::filesystem::path(blob_path).filename().string()}};
  std::ofstream out(json_path);
  if (!out) throw InputError("cannot open for writing: " + json_path);
  out << meta.dump() << "\n";
}

MaskTokenSet load_mask_token_set(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw InputError("cannot open: " + json_path);
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("token set metadata: ") + e.what());
  }
  MaskTokenSet set;
  set.mask_index = meta.at("mask_index").get<int>();
  for (const auto& rc : meta.at("grid_indices")) set.grid_indices.emplace_back(rc.at(0).get<int>(), rc.at(1).get<int>());
  const auto blob_path = std::filesystem::path(json_path).parent_path() / meta.at("blob").get<std::string>();
  set.tokens = read_blob_file(blob_path.string(), "TOK0").values;
  if (set.tokens.rows() != static_cast<Eigen::Index>(set.grid_indices.size())) {
    throw LengthError("token blob rows do not match grid_indices");
  }
  return set;
}

}  // namespace regrec
