#include "regrec/encoder.hpp"

#include <cmath>

#include "regrec/error.hpp"
#include "regrec/rng.hpp"

namespace regrec {

EncoderParams::EncoderParams(int patch_side, int grid_side, int channels, RowMatrixXf projection,
                             std::uint64_t seed)
    : patch_side_(patch_side),
      grid_side_(grid_side),
      channels_(channels),
      projection_(std::move(projection)),
      seed_(seed) {
  if (patch_side < 1 || grid_side < 1) throw ConfigError("patch_side and grid_side must be >= 1");
  if (channels != 1 && channels != 3) throw ConfigError("encoder channels must be 1 or 3");
  if (projection_.rows() != static_cast<Eigen::Index>(patch_side) * patch_side * channels) {
    throw ShapeError("projection rows must equal patch_side^2 * channels");
  }
  if (projection_.cols() < 1) throw ShapeError("encoder dim must be >= 1");
}

EncoderParams EncoderParams::random(int patch_side, int grid_side, int channels, int dim, std::uint64_t seed) {
  const int fan_in = patch_side * patch_side * channels;
  if (fan_in < 1 || dim < 1) throw ConfigError("encoder dims must be >= 1");
  RowMatrixXf projection(fan_in, dim);
  Xoshiro256 rng(seed);
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < projection.size(); ++i) projection.data()[i] = rng.symmetric(a);
  return EncoderParams(patch_side, grid_side, channels, std::move(projection), seed);
}

void EncoderParams::save(const std::string& path) const { write_blob_file(path, "ENC0", projection_); }

EncoderParams EncoderParams::load(const std::string& path, int grid_side) {
  Blob blob = read_blob_file(path, "ENC0");
  const auto fan_in = static_cast<int>(blob.values.rows());
  for (int channels : {1, 3}) {
    if (fan_in % channels != 0) continue;
    const int area = fan_in / channels;
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(area))));
    if (side * side == area) return EncoderParams(side, grid_side, channels, std::move(blob.values));
  }
  throw ShapeError("ENC0 rows are not patch_side^2 * channels");
}

FeatureGrid encode(const RasterImage& image, const EncoderParams& params) {
  const int p = params.patch_side();
  if (image.channels() != params.channels()) {
    throw ShapeError("image has " + std::to_string(image.channels()) + " channels, encoder expects " +
                     std::to_string(params.channels()));
  }
  if (image.width() % p != 0 || image.height() % p != 0) {
    throw ShapeError("image side not divisible by patch_side " + std::to_string(p));
  }
  FeatureGrid grid;
  grid.rows = image.height() / p;
  grid.cols = image.width() / p;
  grid.values.resize(static_cast<Eigen::Index>(grid.rows) * grid.cols, params.dim());

  const int channels = image.channels();
  Eigen::VectorXf patch(params.fan_in());
  const auto projection_t = params.projection().transpose();
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      Eigen::Index k = 0;
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          for (int ch = 0; ch < channels; ++ch) patch[k++] = image.at(c * p + px, r * p + py, ch) / 255.0f;
        }
      }
      Eigen::VectorXf feature = projection_t * patch;
      grid.values.row(static_cast<Eigen::Index>(r) * grid.cols + c) = feature.transpose();
    }
  }
  if (!grid.values.allFinite()) throw NumericError("encoder produced non-finite features");
  return grid;
}

}  // namespace regrec
