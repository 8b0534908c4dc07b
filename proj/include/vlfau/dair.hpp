#pragma once

#include <string>

#include "vlfau/params.hpp"

namespace vlfau {

/// Slots of one AU branch's refinement parameters. Never shared across branches.
struct BranchParams {
  int mlp_w1 = -1;       ///< (C/r, C)
  int mlp_w2 = -1;       ///< (C, C/r)
  int conv_kernel = -1;  ///< (1, 2, 3, 3)
  int conv_bias = -1;    ///< (1)
  int reduction = 4;
};

template <typename T>
struct PooledChannelVectors {
  Tensor<T> f_max;  ///< (C)
  Tensor<T> f_avg;  ///< (C)
};

template <typename T>
struct PooledSpatialMaps {
  Tensor<T> f_max;  ///< (1, H, W)
  Tensor<T> f_avg;  ///< (1, H, W)
};

/// Registers `dair.<branch>.{mlp_w1, mlp_w2, conv_kernel, conv_bias}`.
template <typename T>
BranchParams register_branch(ParamStore<T>& store, int branch, int channels, int reduction, Rng& rng);

template <typename T>
PooledChannelVectors<T> pool_channels(const Tensor<T>& v);
template <typename T>
PooledSpatialMaps<T> pool_spatial(const Tensor<T>& v);

// Graph-level operations on (C, H, W) maps.

/// g = sigmoid(MLP(max_hw v) + MLP(avg_hw v)), shape (C).
template <typename T>
ad::Var channel_gate(Binder<T>& bind, ad::Var v, const BranchParams& p);
/// m = sigmoid(conv3x3([max_c v; avg_c v]) + b), shape (1, H, W).
template <typename T>
ad::Var spatial_gate(Binder<T>& bind, ad::Var v, const BranchParams& p);

template <typename T>
ad::Var channel_attention(Binder<T>& bind, ad::Var v, const BranchParams& p);
template <typename T>
ad::Var spatial_attention(Binder<T>& bind, ad::Var v_bar, const BranchParams& p);
template <typename T>
ad::Var refine(Binder<T>& bind, ad::Var v, const BranchParams& p);

// Value-level wrappers.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& v, const ParamStore<T>& store, const BranchParams& p);
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& v_bar, const ParamStore<T>& store, const BranchParams& p);
template <typename T>
Tensor<T> refine(const Tensor<T>& v, const ParamStore<T>& store, const BranchParams& p);
template <typename T>
Tensor<T> channel_gate(const Tensor<T>& v, const ParamStore<T>& store, const BranchParams& p);
template <typename T>
Tensor<T> spatial_gate(const Tensor<T>& v, const ParamStore<T>& store, const BranchParams& p);

}  // namespace vlfau
