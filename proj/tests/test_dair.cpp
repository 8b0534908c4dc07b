#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "vlfau/dair.hpp"
#include "vlfau/trainer.hpp"

using namespace vlfau;
using vlfau::testing::random_tensor;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Branch {
  ParamStore<double> store;
  BranchParams p;
};

Branch make_branch(int channels, int reduction, std::uint64_t seed, int index = 0) {
  Branch b;
  Rng rng(seed);
  b.p = register_branch(b.store, index, channels, reduction, rng);
  return b;
}

void zero_all(ParamStore<double>& store) {
  for (int i = 0; i < store.size(); ++i) std::fill(store.at(i).data.begin(), store.at(i).data.end(), 0.0);
}

}  // namespace

TEST(Dair, RegistersNamedTensorsPerBranch) {
  ParamStore<double> store;
  Rng rng(1);
  register_branch(store, 3, 8, 4, rng);
  EXPECT_EQ(store.at("dair.3.mlp_w1").shape, (Shape{2, 8}));
  EXPECT_EQ(store.at("dair.3.mlp_w2").shape, (Shape{8, 2}));
  EXPECT_EQ(store.at("dair.3.conv_kernel").shape, (Shape{1, 2, 3, 3}));
  EXPECT_EQ(store.at("dair.3.conv_bias").shape, (Shape{1}));
  EXPECT_THROW(register_branch(store, 4, 6, 4, rng), std::invalid_argument);
}

TEST(ChannelAttention, ZeroMlpHalvesTheInput) {
  Branch b = make_branch(8, 4, 2);
  zero_all(b.store);
  Rng rng(3);
  const auto v = random_tensor({8, 4, 4}, rng);
  const auto out = channel_attention(v, b.store, b.p);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.5 * v[i]);
}

TEST(ChannelAttention, ConstantChannelsPoolEqually) {
  Tensor<double> v({3, 2, 2});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i) v[static_cast<std::size_t>(c * 4 + i)] = 0.3 * c - 0.4;
  const auto pooled = pool_channels(v);
  EXPECT_EQ(pooled.f_max, pooled.f_avg);
}

TEST(ChannelAttention, HandComputedTwoChannelGate) {
  Branch b = make_branch(2, 1, 4);
  b.store.at(b.p.mlp_w1).data = {1.0, 0.0, 0.5, 1.0};
  b.store.at(b.p.mlp_w2).data = {1.0, -1.0, 2.0, 0.5};
  const Tensor<double> v({2, 1, 1}, std::vector<double>{1.0, -2.0});
  // w1 v = [1, -1.5] -> relu [1, 0] -> w2 [1, 0] = [1, 2]; max and avg paths agree, so logits [2, 4]
  const auto gate = channel_gate(v, b.store, b.p);
  EXPECT_NEAR(gate[0], 0.8807970779778823, 1e-15);
  EXPECT_NEAR(gate[1], 0.9820137900379085, 1e-15);
  const auto out = channel_attention(v, b.store, b.p);
  EXPECT_NEAR(out[0], 0.8807970779778823, 1e-15);
  EXPECT_NEAR(out[1], -2.0 * 0.9820137900379085, 1e-15);
}

TEST(SpatialAttention, ZeroKernelHalvesTheInput) {
  Branch b = make_branch(4, 2, 5);
  zero_all(b.store);
  Rng rng(6);
  const auto v = random_tensor({4, 3, 3}, rng);
  const auto out = spatial_attention(v, b.store, b.p);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.5 * v[i]);
}

TEST(SpatialAttention, ZeroKernelWithBiasIsConstantGate) {
  Branch b = make_branch(4, 2, 5);
  zero_all(b.store);
  b.store.at(b.p.conv_bias)[0] = -1.3;
  Rng rng(7);
  const auto gate = spatial_gate(random_tensor({4, 3, 5}, rng), b.store, b.p);
  ASSERT_EQ(gate.shape, (Shape{1, 3, 5}));
  for (double m : gate.data) EXPECT_DOUBLE_EQ(m, sigmoid(-1.3));
}

TEST(SpatialAttention, HandComputedCentreGate) {
  Branch b = make_branch(4, 2, 8);
  // max-path kernel picks the centre, avg-path kernel is +corner -opposite corner
  b.store.at(b.p.conv_kernel).data = {0, 0, 0, 0, 1, 0, 0, 0, 0,  //
                                      1, 0, 0, 0, 0, 0, 0, 0, -1};
  b.store.at(b.p.conv_bias)[0] = 0.2;
  const Tensor<double> v({1, 3, 3}, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
  // one channel: max = avg = v; centre logit = 0.5 + (0.1 - 0.9) + 0.2 = -0.1
  const auto gate = spatial_gate(v, b.store, b.p);
  EXPECT_NEAR(gate[4], 0.47502081252106, 1e-14);
  EXPECT_NEAR(spatial_attention(v, b.store, b.p)[4], 0.5 * 0.47502081252106, 1e-14);
}

TEST(Refine, ZeroInputStaysZero) {
  Branch b = make_branch(8, 4, 9);
  const auto out = refine(Tensor<double>({8, 4, 4}), b.store, b.p);
  for (double x : out.data) EXPECT_EQ(x, 0.0);
}

TEST(Refine, ZeroGateParamsGiveQuarterInput) {
  Branch b = make_branch(8, 4, 9);
  zero_all(b.store);
  Rng rng(10);
  const auto v = random_tensor({8, 4, 4}, rng);
  const auto out = refine(v, b.store, b.p);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.25 * v[i]);
}

TEST(Refine, IndependentBranchesDoNotCollapse) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ParamStore<double> store;
    Rng rng(seed);
    const auto p0 = register_branch(store, 0, 8, 4, rng);
    const auto p1 = register_branch(store, 1, 8, 4, rng);
    // non-zero biases so the spatial gates differ too
    store.at(p0.conv_bias)[0] = 0.3;
    store.at(p1.conv_bias)[0] = -0.3;
    const auto v = random_tensor({8, 4, 4}, rng);
    EXPECT_NE(refine(v, store, p0), refine(v, store, p1)) << "seed " << seed;
  }
}

TEST(Refine, GatesInOpenUnitIntervalAndOutputBounded) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    Branch b = make_branch(4, 2, static_cast<std::uint64_t>(trial));
    b.store.at(b.p.conv_bias)[0] = std::uniform_real_distribution<double>(-2, 2)(rng);
    const auto v = random_tensor({4, 3, 3}, rng, -3.0, 3.0);
    for (double g : channel_gate(v, b.store, b.p).data) ASSERT_TRUE(g > 0.0 && g < 1.0);
    const auto vbar = channel_attention(v, b.store, b.p);
    for (double m : spatial_gate(vbar, b.store, b.p).data) ASSERT_TRUE(m > 0.0 && m < 1.0);
    const auto out = refine(v, b.store, b.p);
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_LE(std::abs(out[i]), std::abs(v[i]));
  }
}

TEST(Pooling, MaxDominatesAverage) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_tensor({5, 3, 4}, rng, -2.0, 2.0);
    const auto c = pool_channels(v);
    for (std::size_t i = 0; i < c.f_max.size(); ++i) ASSERT_GE(c.f_max[i], c.f_avg[i]);
    const auto s = pool_spatial(v);
    ASSERT_EQ(s.f_max.shape, (Shape{1, 3, 4}));
    for (std::size_t i = 0; i < s.f_max.size(); ++i) ASSERT_GE(s.f_max[i], s.f_avg[i]);
  }
}

TEST(Refine, RejectsChannelMismatch) {
  Branch b = make_branch(8, 4, 13);
  EXPECT_THROW(refine(Tensor<double>({6, 2, 2}), b.store, b.p), ShapeError);
}

TEST(Refine, GradientsMatchFiniteDifferences) {
  Branch b = make_branch(8, 4, 14);
  b.store.at(b.p.conv_bias)[0] = 0.1;
  Rng rng(15);
  const auto v = random_tensor({8, 4, 4}, rng);
  const auto w = random_tensor({8, 4, 4}, rng);
  const auto report = grad_check(b.store, [&](Binder<double>& bind) {
    auto& g = bind.graph();
    return ad::sum_all(g, ad::mul(g, refine(bind, g.constant_ref(v), b.p), g.constant_ref(w)));
  });
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param << "[" << report.worst_index << "]";
}
