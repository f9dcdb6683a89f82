#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

namespace regrec {

/// Row-major float matrix used for every serialized tensor.
using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat f32 tensor blob: 8-byte header (4-byte ASCII magic, u16 rows, u16 cols,
/// little-endian) followed by rows*cols little-endian f32 values, row-major.
struct Blob {
  std::array<char, 4> magic{};
  RowMatrixXf values;

  std::string magic_string() const { return {magic.data(), magic.size()}; }
};

void write_blob(std::ostream& out, std::string_view magic, const RowMatrixXf& values);
/// Reads one blob; `expected_magic` empty accepts any magic.
Blob read_blob(std::istream& in, std::string_view expected_magic = {});

void write_blob_file(const std::string& path, std::string_view magic, const RowMatrixXf& values);
Blob read_blob_file(const std::string& path, std::string_view expected_magic = {});

}  // namespace regrec
