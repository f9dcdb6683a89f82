#pragma once

#include <cstdint>
#include <string>

#include "regrec/blob.hpp"
#include "regrec/maskio.hpp"

namespace regrec {

/// rows x cols grid of dim-channel features; row (r * cols + c) of `values`
/// holds cell (r, c).
struct FeatureGrid {
  int rows = 0;
  int cols = 0;
  RowMatrixXf values;

  int dim() const { return static_cast<int>(values.cols()); }
  auto cell(int r, int c) const { return values.row(static_cast<Eigen::Index>(r) * cols + c); }
};

/// Linear patch embedding shared by the global view and every mask crop.
class EncoderParams {
 public:
  inline static constexpr int kDefaultPatchSide = 28;
  inline static constexpr int kDefaultGridSide = 16;
  inline static constexpr int kDefaultDim = 32;

  EncoderParams(int patch_side, int grid_side, int channels, RowMatrixXf projection, std::uint64_t seed = 0);

  /// projection (patch_side^2 * channels) x dim, uniform in [-a, a), a = 1/sqrt(fan_in),
  /// drawn row-major from Xoshiro256(seed).
  static EncoderParams random(int patch_side, int grid_side, int channels, int dim, std::uint64_t seed);

  int patch_side() const { return patch_side_; }
  int grid_side() const { return grid_side_; }
  int channels() const { return channels_; }
  int input_side() const { return patch_side_ * grid_side_; }
  int fan_in() const { return static_cast<int>(projection_.rows()); }
  int dim() const { return static_cast<int>(projection_.cols()); }
  std::uint64_t seed() const { return seed_; }
  const RowMatrixXf& projection() const { return projection_; }

  /// "ENC0" blob of the projection. patch_side and channels are recovered from
  /// fan_in; grid_side must be supplied on load.
  void save(const std::string& path) const;
  static EncoderParams load(const std::string& path, int grid_side = kDefaultGridSide);

 private:
  int patch_side_;
  int grid_side_;
  int channels_;
  RowMatrixXf projection_;
  std::uint64_t seed_;
};

/// feature(r, c) = projection^T * flatten(patch(r, c) / 255), with the patch
/// flattened as (py * patch_side + px) * channels + ch.
FeatureGrid encode(const RasterImage& image, const EncoderParams& params);

}  // namespace regrec
