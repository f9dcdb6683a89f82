#include "regrec/maskio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "regrec/error.hpp"

namespace regrec {

using nlohmann::json;

RasterImage::RasterImage(int width, int height, int channels)
    : RasterImage(width, height, channels,
                  std::vector<float>(static_cast<std::size_t>(std::max(width, 0)) *
                                     std::max(height, 0) * std::max(channels, 0))) {}

RasterImage::RasterImage(int width, int height, int channels, std::vector<float> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  if (width < 1 || height < 1) throw ShapeError("image dimensions must be >= 1");
  if (channels != 1 && channels != 3) throw ShapeError("image channels must be 1 or 3");
  if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
    throw LengthError("image data length does not match width*height*channels");
  }
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  if (width < 1 || height < 1) throw ShapeError("mask dimensions must be >= 1");
  if (bits_.size() != static_cast<std::size_t>(width) * height) {
    throw LengthError("mask bit count does not match width*height");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
  if (count() == 0) throw ValueError("mask is empty");
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class PnmReader {
 public:
  explicit PnmReader(const std::string& bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_ || pos_ - start > 9) {
      throw ParseError(std::string("PNM header: invalid ") + field);
    }
    return std::stol(bytes_.substr(start, pos_ - start));
  }

  bool at_end() {
    skip_space_and_comments();
    return pos_ >= bytes_.size();
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

RasterImage parse_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw ParseError("PNM header: invalid magic");
  const char kind = bytes[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw ParseError("PNM header: invalid magic");
  }
  const bool binary = kind == '5' || kind == '6';
  const int channels = (kind == '3' || kind == '6') ? 3 : 1;

  PnmReader reader(bytes);
  reader.advance(2);
  const long width = reader.read_int("width");
  const long height = reader.read_int("height");
  const long maxval = reader.read_int("maxval");
  if (width < 1) throw ParseError("PNM header: invalid width");
  if (height < 1) throw ParseError("PNM header: invalid height");
  if (maxval < 1 || maxval > 255) throw ParseError("PNM header: invalid maxval (must be 1..255)");

  const std::size_t n = static_cast<std::size_t>(width) * height * channels;
  std::vector<float> data(n);
  if (binary) {
    // Exactly one whitespace byte separates the header from the raster.
    const std::size_t start = reader.pos() + 1;
    if (reader.pos() >= bytes.size() || bytes.size() - start < n) {
      throw LengthError("PNM raster truncated: expected " + std::to_string(n) + " bytes");
    }
    for (std::size_t i = 0; i < n; ++i) {
      data[i] = static_cast<float>(static_cast<unsigned char>(bytes[start + i]));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      if (reader.at_end()) {
        throw LengthError("PNM raster truncated: expected " + std::to_string(n) + " values, got " +
                          std::to_string(i));
      }
      const long v = reader.read_int("pixel value");
      if (v > maxval) throw ParseError("PNM raster: value exceeds maxval");
      data[i] = static_cast<float>(v);
    }
  }
  if (maxval != 255) {
    for (auto& v : data) v = std::round(v * 255.0f / static_cast<float>(maxval));
  }
  return RasterImage(static_cast<int>(width), static_cast<int>(height), channels, std::move(data));
}

RasterImage read_pgm(const std::string& path) { return parse_pnm(slurp(path)); }

std::string encode_pnm(const RasterImage& image) {
  std::string out = (image.channels() == 3 ? "P6\n" : "P5\n") + std::to_string(image.width()) +
                    " " + std::to_string(image.height()) + "\n255\n";
  out.reserve(out.size() + image.data().size());
  for (float v : image.data()) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(std::round(v), 0.0f, 255.0f))));
  }
  return out;
}

void write_pgm(const std::string& path, const RasterImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  const std::string bytes = encode_pnm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

BinaryMask read_mask_pgm(const std::string& path) {
  const RasterImage image = read_pgm(path);
  if (image.channels() != 1) throw ShapeError("mask file must be greyscale");
  std::vector<std::uint8_t> bits(image.data().size());
  std::transform(image.data().begin(), image.data().end(), bits.begin(),
                 [](float v) { return static_cast<std::uint8_t>(v >= 128.0f); });
  return BinaryMask(image.width(), image.height(), std::move(bits));
}

void write_mask_pgm(const std::string& path, const BinaryMask& mask) {
  std::vector<float> data(mask.bits().size());
  std::transform(mask.bits().begin(), mask.bits().end(), data.begin(),
                 [](std::uint8_t b) { return b ? 255.0f : 0.0f; });
  write_pgm(path, RasterImage(mask.width(), mask.height(), 1, std::move(data)));
}

namespace {

BinaryMask mask_from_rle_json(const json& rle) {
  if (!rle.is_object() || !rle.contains("size") || !rle.contains("counts")) {
    throw ParseError("RLE: expected object with 'size' and 'counts'");
  }
  const json& size = rle.at("size");
  if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() ||
      !size[1].is_number_integer()) {
    throw ParseError("RLE: 'size' must be [h, w]");
  }
  const long long h = size[0].get<long long>();
  const long long w = size[1].get<long long>();
  if (h < 1 || w < 1) throw ValueError("RLE: 'size' entries must be >= 1");
  const json& counts = rle.at("counts");
  if (!counts.is_array()) throw ParseError("RLE: 'counts' must be an array (compressed RLE unsupported)");

  const auto total = static_cast<unsigned long long>(h * w);
  unsigned long long sum = 0;
  for (const auto& c : counts) {
    if (!c.is_number_integer()) throw ParseError("RLE: counts must be integers");
    const long long v = c.get<long long>();
    if (v < 0) throw ValueError("RLE: negative count");
    sum += static_cast<unsigned long long>(v);
  }
  if (sum != total) {
    throw LengthError("RLE: counts sum " + std::to_string(sum) + " != h*w " + std::to_string(total));
  }

  std::vector<std::uint8_t> bits(total);
  std::size_t index = 0;  // column-major position
  bool value = false;
  for (const auto& c : counts) {
    const auto run = c.get<unsigned long long>();
    for (unsigned long long k = 0; k < run; ++k, ++index) {
      if (value) {
        const std::size_t x = index / static_cast<std::size_t>(h);
        const std::size_t y = index % static_cast<std::size_t>(h);
        bits[y * static_cast<std::size_t>(w) + x] = 1;
      }
    }
    value = !value;
  }
  return BinaryMask(static_cast<int>(w), static_cast<int>(h), std::move(bits));
}

json mask_to_rle_json(const BinaryMask& mask) {
  json counts = json::array();
  bool value = false;
  unsigned long long run = 0;
  for (int x = 0; x < mask.width(); ++x) {
    for (int y = 0; y < mask.height(); ++y) {
      if (mask.at(x, y) != value) {
        counts.push_back(run);
        run = 0;
        value = !value;
      }
      ++run;
    }
  }
  counts.push_back(run);
  return json{{"size", {mask.height(), mask.width()}}, {"counts", std::move(counts)}};
}

}  // namespace

BinaryMask mask_from_rle(const std::string& json_text) {
  json parsed;
  try {
    parsed = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("RLE: invalid JSON: ") + e.what());
  }
  return mask_from_rle_json(parsed);
}

std::string mask_to_rle(const BinaryMask& mask) { return mask_to_rle_json(mask).dump(); }

std::vector<MaskRecord> parse_mask_records(const std::string& text) {
  std::vector<MaskRecord> records;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw ParseError("record must be a JSON object");
      if (!j.contains("image_id") || !j["image_id"].is_string()) {
        throw ParseError("missing string 'image_id'");
      }
      auto image_id = j["image_id"].get<std::string>();
      if (image_id.empty()) throw ValueError("'image_id' must be non-empty");
      std::optional<std::string> label;
      if (j.contains("label") && !j["label"].is_null()) {
        if (!j["label"].is_string()) throw ParseError("'label' must be a string");
        label = j["label"].get<std::string>();
      }
      if (!j.contains("rle")) throw ParseError("missing 'rle'");
      records.push_back(MaskRecord{mask_from_rle_json(j["rle"]), std::move(image_id), std::move(label)});
    } catch (const json::exception& e) {
      throw ParseError("record line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError("record line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<MaskRecord> read_mask_records(const std::string& path) {
  return parse_mask_records(slurp(path));
}

std::string format_mask_record(const MaskRecord& record) {
  json j{{"image_id", record.image_id}, {"rle", mask_to_rle_json(record.mask)}};
  j["label"] = record.label ? json(*record.label) : json(nullptr);
  return j.dump();
}

FilterResult area_ratio_filter(const std::vector<MaskRecord>& records,
                               const std::map<std::string, double>& image_area_by_id,
                               double min_ratio) {
  if (!(min_ratio >= 0.0 && min_ratio <= 1.0)) throw ValueError("min_ratio must be in [0, 1]");
  FilterResult result;
  for (const auto& record : records) {
    const auto it = image_area_by_id.find(record.image_id);
    if (it == image_area_by_id.end()) throw KeyError("no image area for image_id '" + record.image_id + "'");
    if (!(it->second > 0.0)) throw ValueError("image area must be positive for '" + record.image_id + "'");
    const double ratio = static_cast<double>(record.mask.count()) / it->second;
    (ratio >= min_ratio ? result.kept : result.dropped).push_back(record);
  }
  return result;
}

}  // namespace regrec
