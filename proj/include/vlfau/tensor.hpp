#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlfau {

using Shape = std::vector<int>;

// Eigen's vectorised kernels peel leading elements up to the next aligned
// address, so float results depend on buffer alignment. Pinning every buffer
// to Eigen's maximum alignment keeps seeded runs bit-reproducible.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// Thrown when array shapes disagree with what an operation needs.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

std::string shape_str(const Shape& s);

/// Dense row-major array. A FeatureMap is a rank-3 Tensor (C, H, W); its
/// region view is the same buffer read as (C, H*W).
template <typename T>
struct Tensor {
  Shape shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, Buffer<T> values) : shape(std::move(s)), data(std::move(values)) {
    check_size();
  }
  Tensor(Shape s, const std::vector<T>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
    check_size();
  }
  Tensor(Shape s, std::initializer_list<T> values) : shape(std::move(s)), data(values) { check_size(); }

  void check_size() const {
    if (data.size() != shape_numel(shape)) {
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  /// Returns a copy with a new shape of equal element count.
  Tensor reshaped(Shape s) const {
    Tensor out(std::move(s), data);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

/// Region view of a (C, H, W) feature map: a (C, H*W) tensor sharing values.
template <typename T>
Tensor<T> region_view(const Tensor<T>& fmap) {
  if (fmap.rank() != 3) throw ShapeError("region_view expects (C, H, W), got " + shape_str(fmap.shape));
  return fmap.reshaped({fmap.dim(0), fmap.dim(1) * fmap.dim(2)});
}

/// Inverse of region_view.
template <typename T>
Tensor<T> from_region_view(const Tensor<T>& regions, int height, int width) {
  if (regions.rank() != 2 || regions.dim(1) != height * width) {
    throw ShapeError("region grid " + std::to_string(height) + "x" + std::to_string(width) +
                     " does not match " + shape_str(regions.shape));
  }
  return regions.reshaped({regions.dim(0), height, width});
}

// TEN1 tensor files: magic "TEN1", u32 rank, u32 dims, float32 data, all little-endian.
void write_ten1(const std::string& path, const Tensor<float>& t);
Tensor<float> read_ten1(const std::string& path);
std::vector<char> encode_ten1(const Tensor<float>& t);
Tensor<float> decode_ten1(const std::vector<char>& bytes);

/// Thrown on filesystem and format failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vlfau
