#include "regrec/blob.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "regrec/error.hpp"

namespace regrec {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace {

void put_u16(std::ostream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  out.write(bytes, 2);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_blob(std::ostream& out, std::string_view magic, const RowMatrixXf& values) {
  if (magic.size() != 4) throw ValueError("blob magic must be 4 bytes");
  constexpr auto kMax = std::numeric_limits<std::uint16_t>::max();
  if (values.rows() > kMax || values.cols() > kMax) {
    throw ShapeError("blob dimensions exceed u16 range");
  }
  out.write(magic.data(), 4);
  put_u16(out, static_cast<std::uint16_t>(values.rows()));
  put_u16(out, static_cast<std::uint16_t>(values.cols()));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw InputError("failed to write blob");
}

Blob read_blob(std::istream& in, std::string_view expected_magic) {
  unsigned char header[8];
  if (!in.read(reinterpret_cast<char*>(header), 8)) throw LengthError("blob header truncated");
  Blob blob;
  std::memcpy(blob.magic.data(), header, 4);
  if (!expected_magic.empty() && blob.magic_string() != expected_magic) {
    throw ParseError("blob magic: expected '" + std::string(expected_magic) + "', got '" +
                     blob.magic_string() + "'");
  }
  const auto rows = get_u16(header + 4);
  const auto cols = get_u16(header + 6);
  blob.values.resize(rows, cols);
  const auto bytes = static_cast<std::streamsize>(blob.values.size() * sizeof(float));
  if (bytes > 0 && !in.read(reinterpret_cast<char*>(blob.values.data()), bytes)) {
    throw LengthError("blob payload truncated");
  }
  return blob;
}

void write_blob_file(const std::string& path, std::string_view magic, const RowMatrixXf& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  write_blob(out, magic, values);
}

Blob read_blob_file(const std::string& path, std::string_view expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path);
  return read_blob(in, expected_magic);
}

}  // namespace regrec
