#include "vlfau/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace vlfau {

static_assert(std::endian::native == std::endian::little, "TEN1 I/O assumes a little-endian host");

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

std::uint32_t get_u32(const std::vector<char>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw IoError("TEN1: truncated header");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

std::vector<char> encode_ten1(const Tensor<float>& t) {
  std::vector<char> out;
  out.reserve(8 + 4 * t.shape.size() + 4 * t.size());
  out.insert(out.end(), {'T', 'E', 'N', '1'});
  put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
  const char* raw = reinterpret_cast<const char*>(t.data.data());
  out.insert(out.end(), raw, raw + 4 * t.size());
  return out;
}

Tensor<float> decode_ten1(const std::vector<char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "TEN1", 4) != 0) {
    throw IoError("TEN1: bad magic");
  }
  std::size_t pos = 4;
  const std::uint32_t rank = get_u32(bytes, pos);
  if (rank > 8) throw IoError("TEN1: implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(get_u32(bytes, pos)));
  const std::size_t n = shape_numel(shape);
  if (bytes.size() - pos != 4 * n) {
    throw IoError("TEN1: payload size mismatch for shape " + shape_str(shape));
  }
  Tensor<float> t(shape);
  std::memcpy(t.data.data(), bytes.data() + pos, 4 * n);
  return t;
}

void write_ten1(const std::string& path, const Tensor<float>& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  const auto bytes = encode_ten1(t);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

Tensor<float> read_ten1(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_ten1(bytes);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace vlfau
