#include "vlfau/dair.hpp"

namespace vlfau {

template <typename T>
BranchParams register_branch(ParamStore<T>& store, int branch, int channels, int reduction, Rng& rng) {
  if (reduction < 1 || channels % reduction) {
    throw ShapeError("reduction ratio " + std::to_string(reduction) + " must divide " +
                     std::to_string(channels) + " channels");
  }
  const int hidden = channels / reduction;
  const std::string prefix = "dair." + std::to_string(branch);
  BranchParams p;
  p.reduction = reduction;
  p.mlp_w1 = store.add(prefix + ".mlp_w1", kaiming_uniform<T>({hidden, channels}, channels, rng));
  p.mlp_w2 = store.add(prefix + ".mlp_w2", kaiming_uniform<T>({channels, hidden}, hidden, rng, 0.5));
  p.conv_kernel = store.add(prefix + ".conv_kernel", kaiming_uniform<T>({1, 2, 3, 3}, 18, rng, 0.5));
  p.conv_bias = store.add(prefix + ".conv_bias", Tensor<T>({1}));
  return p;
}

namespace {

template <typename T>
void check_branch(const ParamStore<T>& store, const Shape& v, const BranchParams& p) {
  if (v.size() != 3) throw ShapeError("DAIR expects a (C, H, W) map, got " + shape_str(v));
  const Tensor<T>& w1 = store.at(p.mlp_w1);
  if (w1.dim(1) != v[0]) {
    throw ShapeError("DAIR branch built for " + std::to_string(w1.dim(1)) + " channels applied to " +
                     shape_str(v));
  }
}

}  // namespace

template <typename T>
PooledChannelVectors<T> pool_channels(const Tensor<T>& v) {
  ad::Graph<T> g(false);
  const ad::Var x = g.constant_ref(v);
  return {g.value(ad::max_over_rest(g, x)), g.value(ad::mean_over_rest(g, x))};
}

template <typename T>
PooledSpatialMaps<T> pool_spatial(const Tensor<T>& v) {
  ad::Graph<T> g(false);
  const ad::Var x = g.constant_ref(v);
  return {g.value(ad::max_over_first(g, x)), g.value(ad::mean_over_first(g, x))};
}

template <typename T>
ad::Var channel_gate(Binder<T>& bind, ad::Var v, const BranchParams& p) {
  auto& g = bind.graph();
  check_branch(bind.store(), g.shape(v), p);
  const ad::Var w1 = bind(p.mlp_w1);
  const ad::Var w2 = bind(p.mlp_w2);
  auto mlp = [&](ad::Var f) { return ad::matmul(g, w2, ad::relu(g, ad::matmul(g, w1, f))); };
  const ad::Var f_max = ad::max_over_rest(g, v);
  const ad::Var f_avg = ad::mean_over_rest(g, v);
  return ad::sigmoid(g, ad::add(g, mlp(f_max), mlp(f_avg)));
}

template <typename T>
ad::Var spatial_gate(Binder<T>& bind, ad::Var v, const BranchParams& p) {
  auto& g = bind.graph();
  if (g.shape(v).size() != 3) throw ShapeError("spatial gate expects (C, H, W), got " + shape_str(g.shape(v)));
  const ad::Var pooled = ad::concat(g, {ad::max_over_first(g, v), ad::mean_over_first(g, v)});
  return ad::sigmoid(g, ad::conv2d(g, pooled, bind(p.conv_kernel), bind(p.conv_bias), 1, 1));
}

template <typename T>
ad::Var channel_attention(Binder<T>& bind, ad::Var v, const BranchParams& p) {
  return ad::mul_rows(bind.graph(), v, channel_gate(bind, v, p));
}

template <typename T>
ad::Var spatial_attention(Binder<T>& bind, ad::Var v_bar, const BranchParams& p) {
  return ad::mul_cols(bind.graph(), v_bar, spatial_gate(bind, v_bar, p));
}

template <typename T>
ad::Var refine(Binder<T>& bind, ad::Var v, const BranchParams& p) {
  return spatial_attention(bind, channel_attention(bind, v, p), p);
}

namespace {

template <typename T, typename F>
Tensor<T> run_value(const Tensor<T>& v, const ParamStore<T>& store, F f) {
  ad::Graph<T> g(false);
  Binder<T> bind(g, store);
  return g.value(f(bind, g.constant_ref(v)));
}

}  // namespace

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& v, const ParamStore<T>& store, const BranchParams& p) {
  return run_value(v, store, [&](Binder<T>& b, ad::Var x) { return channel_attention(b, x, p); });
}
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& v_bar, const ParamStore<T>& store, const BranchParams& p) {
  return run_value(v_bar, store, [&](Binder<T>& b, ad::Var x) { return spatial_attention(b, x, p); });
}
template <typename T>
Tensor<T> refine(const Tensor<T>& v, const ParamStore<T>& store, const BranchParams& p) {
  return run_value(v, store, [&](Binder<T>& b, ad::Var x) { return refine(b, x, p); });
}
template <typename T>
Tensor<T> channel_gate(const Tensor<T>& v, const ParamStore<T>& store, const BranchParams& p) {
  return run_value(v, store, [&](Binder<T>& b, ad::Var x) { return channel_gate(b, x, p); });
}
template <typename T>
Tensor<T> spatial_gate(const Tensor<T>& v, const ParamStore<T>& store, const BranchParams& p) {
  return run_value(v, store, [&](Binder<T>& b, ad::Var x) { return spatial_gate(b, x, p); });
}

#define VLFAU_INSTANTIATE(T)                                                                        \
  template BranchParams register_branch<T>(ParamStore<T>&, int, int, int, Rng&);                   \
  template PooledChannelVectors<T> pool_channels<T>(const Tensor<T>&);                             \
  template PooledSpatialMaps<T> pool_spatial<T>(const Tensor<T>&);                                 \
  template ad::Var channel_gate<T>(Binder<T>&, ad::Var, const BranchParams&);                      \
  template ad::Var spatial_gate<T>(Binder<T>&, ad::Var, const BranchParams&);                      \
  template ad::Var channel_attention<T>(Binder<T>&, ad::Var, const BranchParams&);                 \
  template ad::Var spatial_attention<T>(Binder<T>&, ad::Var, const BranchParams&);                 \
  template ad::Var refine<T>(Binder<T>&, ad::Var, const BranchParams&);                            \
  template Tensor<T> channel_attention<T>(const Tensor<T>&, const ParamStore<T>&, const BranchParams&); \
  template Tensor<T> spatial_attention<T>(const Tensor<T>&, const ParamStore<T>&, const BranchParams&); \
  template Tensor<T> refine<T>(const Tensor<T>&, const ParamStore<T>&, const BranchParams&);       \
  template Tensor<T> channel_gate<T>(const Tensor<T>&, const ParamStore<T>&, const BranchParams&); \
  template Tensor<T> spatial_gate<T>(const Tensor<T>&, const ParamStore<T>&, const BranchParams&);

VLFAU_INSTANTIATE(float)
VLFAU_INSTANTIATE(double)

}  // namespace vlfau
