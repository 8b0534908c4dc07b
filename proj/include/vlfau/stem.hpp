#pragma once

#include <array>

#include "vlfau/params.hpp"

namespace vlfau {

inline constexpr int kStages = 4;

struct StemConfig {
  int in_channels = 3;
  int base_channels = 16;  ///< c0; stage k has c0 * 2^(k-1) channels
  int msc_width = 16;      ///< per-stage width after the MSC convolutions
  int feature_dim = 32;    ///< d, width of the fused representation V

  int stage_channels(int k) const { return base_channels << k; }
  int concat_width() const { return kStages * msc_width; }
};

/// Strided 3x3 convolution per stage (stride 2, zero pad 1) followed by ReLU.
struct StemParams {
  std::array<int, kStages> weight{};
  std::array<int, kStages> bias{};
};

/// One 3x3 convolution per stage to `msc_width` channels, then Wm (d x 4*msc_width).
struct MscParams {
  std::array<int, kStages> weight{};
  std::array<int, kStages> bias{};
  int mix = -1;
};

template <typename T>
struct StagePyramid {
  std::array<Tensor<T>, kStages> stages;
};

template <typename T>
StemParams register_stem(ParamStore<T>& store, const StemConfig& cfg, Rng& rng);
template <typename T>
MscParams register_msc(ParamStore<T>& store, const StemConfig& cfg, Rng& rng);

/// Checks spatial divisibility by 16 and the [0, 1] value range.
template <typename T>
void validate_image(const Tensor<T>& image);

template <typename T>
std::array<ad::Var, kStages> encode_stages(Binder<T>& bind, ad::Var image, const StemParams& p);

template <typename T>
ad::Var msc_fuse(Binder<T>& bind, const std::array<ad::Var, kStages>& stages, const MscParams& p);

template <typename T>
StagePyramid<T> encode_stages(const Tensor<T>& image, const ParamStore<T>& store, const StemParams& p);

template <typename T>
Tensor<T> msc_fuse(const StagePyramid<T>& pyramid, const ParamStore<T>& store, const MscParams& p);

}  // namespace vlfau
