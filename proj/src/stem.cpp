#include "vlfau/stem.hpp"

#include <cmath>
#include <string>

namespace vlfau {

template <typename T>
StemParams register_stem(ParamStore<T>& store, const StemConfig& cfg, Rng& rng) {
  StemParams p;
  int in = cfg.in_channels;
  for (int k = 0; k < kStages; ++k) {
    const int out = cfg.stage_channels(k);
    const std::string prefix = "stem.stage" + std::to_string(k);
    p.weight[k] = store.add(prefix + ".weight", kaiming_uniform<T>({out, in, 3, 3}, in * 9, rng));
    p.bias[k] = store.add(prefix + ".bias", Tensor<T>({out}));
    in = out;
  }
  return p;
}

template <typename T>
MscParams register_msc(ParamStore<T>& store, const StemConfig& cfg, Rng& rng) {
  MscParams p;
  for (int k = 0; k < kStages; ++k) {
    const int in = cfg.stage_channels(k);
    const std::string prefix = "msc.conv" + std::to_string(k);
    p.weight[k] = store.add(prefix + ".weight",
                            kaiming_uniform<T>({cfg.msc_width, in, 3, 3}, in * 9, rng, 1.0 / std::sqrt(2.0)));
    p.bias[k] = store.add(prefix + ".bias", Tensor<T>({cfg.msc_width}));
  }
  p.mix = store.add("msc.mix", kaiming_uniform<T>({cfg.feature_dim, cfg.concat_width()},
                                                   cfg.concat_width(), rng, 1.0 / std::sqrt(2.0)));
  return p;
}

template <typename T>
void validate_image(const Tensor<T>& image) {
  if (image.rank() != 3) throw ShapeError("image must be (C, H, W), got " + shape_str(image.shape));
  if (image.dim(1) % 16 || image.dim(2) % 16 || image.dim(1) == 0 || image.dim(2) == 0) {
    throw ShapeError("image height and width must be positive multiples of 16, got " + shape_str(image.shape));
  }
  for (T v : image.data) {
    if (!(v >= T(0) && v <= T(1))) throw std::domain_error("image values must be finite and within [0, 1]");
  }
}

template <typename T>
std::array<ad::Var, kStages> encode_stages(Binder<T>& bind, ad::Var image, const StemParams& p) {
  auto& g = bind.graph();
  const Shape& s = g.shape(image);
  if (s.size() != 3 || s[1] % 16 || s[2] % 16) {
    throw ShapeError("encode_stages: spatial dims must be divisible by 16, got " + shape_str(s));
  }
  std::array<ad::Var, kStages> out;
  ad::Var x = image;
  for (int k = 0; k < kStages; ++k) {
    x = ad::relu(g, ad::conv2d(g, x, bind(p.weight[k]), bind(p.bias[k]), 2, 1));
    out[k] = x;
  }
  return out;
}

template <typename T>
ad::Var msc_fuse(Binder<T>& bind, const std::array<ad::Var, kStages>& stages, const MscParams& p) {
  auto& g = bind.graph();
  const Shape& coarse = g.shape(stages[kStages - 1]);
  std::vector<ad::Var> parts;
  for (int k = 0; k < kStages; ++k) {
    const Shape& s = g.shape(stages[k]);
    const Tensor<T>& w = bind.store().at(p.weight[k]);
    if (s.size() != 3 || w.dim(1) != s[0]) {
      throw ShapeError("msc_fuse: stage " + std::to_string(k) + " has shape " + shape_str(s) +
                       " but its convolution expects " + std::to_string(w.dim(1)) + " channels");
    }
    if (s[1] % coarse[1] || s[2] % coarse[2] || s[1] / coarse[1] != s[2] / coarse[2]) {
      throw ShapeError("msc_fuse: stage " + std::to_string(k) + " grid " + shape_str(s) +
                       " does not pool onto " + shape_str(coarse));
    }
    ad::Var c = ad::conv2d(g, stages[k], bind(p.weight[k]), bind(p.bias[k]), 1, 1);
    parts.push_back(ad::avg_pool(g, c, s[1] / coarse[1]));
  }
  const ad::Var cat = ad::concat(g, parts);
  const Shape& cs = g.shape(cat);
  const Tensor<T>& mix = bind.store().at(p.mix);
  if (mix.dim(1) != cs[0]) {
    throw ShapeError("msc_fuse: Wm expects " + std::to_string(mix.dim(1)) + " channels, got " +
                     std::to_string(cs[0]));
  }
  const ad::Var flat = ad::reshape(g, cat, Shape{cs[0], cs[1] * cs[2]});
  const ad::Var fused = ad::matmul(g, bind(p.mix), flat);
  return ad::reshape(g, fused, Shape{mix.dim(0), cs[1], cs[2]});
}

template <typename T>
StagePyramid<T> encode_stages(const Tensor<T>& image, const ParamStore<T>& store, const StemParams& p) {
  ad::Graph<T> g(false);
  Binder<T> bind(g, store);
  const auto vars = encode_stages(bind, g.constant_ref(image), p);
  StagePyramid<T> out;
  for (int k = 0; k < kStages; ++k) out.stages[k] = g.value(vars[k]);
  return out;
}

template <typename T>
Tensor<T> msc_fuse(const StagePyramid<T>& pyramid, const ParamStore<T>& store, const MscParams& p) {
  ad::Graph<T> g(false);
  Binder<T> bind(g, store);
  std::array<ad::Var, kStages> vars;
  for (int k = 0; k < kStages; ++k) vars[k] = g.constant_ref(pyramid.stages[k]);
  return g.value(msc_fuse(bind, vars, p));
}

#define VLFAU_INSTANTIATE(T)                                                                          \
  template StemParams register_stem<T>(ParamStore<T>&, const StemConfig&, Rng&);                     \
  template MscParams register_msc<T>(ParamStore<T>&, const StemConfig&, Rng&);                       \
  template void validate_image<T>(const Tensor<T>&);                                                 \
  template std::array<ad::Var, kStages> encode_stages<T>(Binder<T>&, ad::Var, const StemParams&);    \
  template ad::Var msc_fuse<T>(Binder<T>&, const std::array<ad::Var, kStages>&, const MscParams&);   \
  template StagePyramid<T> encode_stages<T>(const Tensor<T>&, const ParamStore<T>&, const StemParams&); \
  template Tensor<T> msc_fuse<T>(const StagePyramid<T>&, const ParamStore<T>&, const MscParams&);

VLFAU_INSTANTIATE(float)
VLFAU_INSTANTIATE(double)

}  // namespace vlfau
