#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace regrec {

/// Row-major, channel-interleaved raster. Values live in [0, 255] but are kept
/// as floats so resampled crops are not quantized before encoding.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int width, int height, int channels);
  RasterImage(int width, int height, int channels, std::vector<float> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  float at(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  float& at(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  bool operator==(const RasterImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<float> data_;
};

/// Row-major boolean raster with at least one set bit.
class BinaryMask {
 public:
  /// Throws LengthError on size mismatch, ValueError when no bit is set.
  BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t count() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
};

struct MaskRecord {
  BinaryMask mask;
  std::string image_id;
  std::optional<std::string> label;
};

// PNM I/O. P2/P5 give one channel, P3/P6 three. Writers emit binary forms and
// round values to the nearest integer.
RasterImage read_pgm(const std::string& path);
RasterImage parse_pnm(const std::string& bytes);
void write_pgm(const std::string& path, const RasterImage& image);
std::string encode_pnm(const RasterImage& image);

/// Mask stored as a greyscale PNM; a pixel is set when its value is >= 128.
BinaryMask read_mask_pgm(const std::string& path);
void write_mask_pgm(const std::string& path, const BinaryMask& mask);

/// COCO uncompressed RLE: {"size":[h,w],"counts":[...]}; column-major runs
/// alternating false/true, starting with a (possibly empty) false run.
BinaryMask mask_from_rle(const std::string& json_text);
std::string mask_to_rle(const BinaryMask& mask);

/// JSON-lines: {"image_id":..., "label":..., "rle":{...}} per line. Errors name
/// the 1-based line number.
std::vector<MaskRecord> read_mask_records(const std::string& path);
std::vector<MaskRecord> parse_mask_records(const std::string& text);
std::string format_mask_record(const MaskRecord& record);

struct FilterResult {
  std::vector<MaskRecord> kept;
  std::vector<MaskRecord> dropped;
};

inline constexpr double kDefaultMinAreaRatio = 0.001;

/// Keeps a record iff popcount(mask) / area(image) >= min_ratio. Order is
/// preserved in both outputs.
FilterResult area_ratio_filter(const std::vector<MaskRecord>& records,
                               const std::map<std::string, double>& image_area_by_id,
                               double min_ratio = kDefaultMinAreaRatio);

}  // namespace regrec
