#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vlfau/trainer.hpp"

using namespace vlfau;
using vlfau::testing::random_tensor;

namespace {

// Contracts an op's output with fixed random weights so every output element
// contributes a distinct amount to the scalar under test.
ad::Var probe(ad::Graph<double>& g, ad::Var out, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum_all(g, ad::mul(g, out, g.constant(random_tensor(g.shape(out), rng))));
}

using OpBuilder = std::function<ad::Var(ad::Graph<double>&, const std::vector<ad::Var>&)>;

double op_grad_error(const std::vector<Shape>& inputs, const OpBuilder& op, std::uint64_t seed = 1,
                     double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  ParamStore<double> store;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    store.add("x" + std::to_string(i), random_tensor(inputs[i], rng, lo, hi));
  }
  const auto report = grad_check(store, [&](Binder<double>& bind) {
    std::vector<ad::Var> xs;
    for (int i = 0; i < store.size(); ++i) xs.push_back(bind(i));
    return probe(bind.graph(), op(bind.graph(), xs), seed + 100);
  });
  return report.max_rel_error;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Autodiff, MatmulShapes) {
  ad::Graph<double> g;
  const auto a = g.constant(Tensor<double>({2, 3}, 1.0));
  const auto b = g.constant(Tensor<double>({3, 4}, 1.0));
  const auto v = g.constant(Tensor<double>({3}, 1.0));
  EXPECT_EQ(g.shape(ad::matmul(g, a, b)), (Shape{2, 4}));
  EXPECT_EQ(g.shape(ad::matmul(g, a, v)), (Shape{2}));
  EXPECT_EQ(g.shape(ad::matmul(g, g.constant(Tensor<double>({2}, 1.0)), a)), (Shape{3}));
  EXPECT_EQ(g.value(ad::matmul(g, v, v))[0], 3.0);
  EXPECT_THROW(ad::matmul(g, b, a), ShapeError);
}

TEST(Autodiff, ElementwiseGradients) {
  EXPECT_LT(op_grad_error({{3, 4}, {3, 4}}, [](auto& g, auto& x) { return ad::add(g, x[0], x[1]); }), kTol);
  EXPECT_LT(op_grad_error({{3, 4}, {3, 4}}, [](auto& g, auto& x) { return ad::mul(g, x[0], x[1]); }), kTol);
  EXPECT_LT(op_grad_error({{5}}, [](auto& g, auto& x) { return ad::scale(g, x[0], -2.5); }), kTol);
  EXPECT_LT(op_grad_error({{2, 3}, {2, 3}, {2, 3}}, [](auto& g, auto& x) { return ad::add_n(g, x); }), kTol);
  EXPECT_LT(op_grad_error({{7}}, [](auto& g, auto& x) { return ad::sigmoid(g, x[0]); }), kTol);
  EXPECT_LT(op_grad_error({{7}}, [](auto& g, auto& x) { return ad::tanh(g, x[0]); }), kTol);
  // keep inputs away from the kink
  EXPECT_LT(op_grad_error({{9}}, [](auto& g, auto& x) { return ad::relu(g, x[0]); }, 3), kTol);
}

TEST(Autodiff, LinearAlgebraGradients) {
  EXPECT_LT(op_grad_error({{3, 4}, {4, 2}}, [](auto& g, auto& x) { return ad::matmul(g, x[0], x[1]); }), kTol);
  EXPECT_LT(op_grad_error({{3, 4}, {4}}, [](auto& g, auto& x) { return ad::matmul(g, x[0], x[1]); }), kTol);
  EXPECT_LT(op_grad_error({{4}, {4, 5}}, [](auto& g, auto& x) { return ad::matmul(g, x[0], x[1]); }), kTol);
  EXPECT_LT(op_grad_error({{3, 5}, {3}}, [](auto& g, auto& x) { return ad::add_row_bias(g, x[0], x[1]); }), kTol);
  EXPECT_LT(op_grad_error({{3, 2, 2}, {3}}, [](auto& g, auto& x) { return ad::mul_rows(g, x[0], x[1]); }), kTol);
  EXPECT_LT(op_grad_error({{3, 2, 2}, {1, 2, 2}}, [](auto& g, auto& x) { return ad::mul_cols(g, x[0], x[1]); }),
            kTol);
}

TEST(Autodiff, ReductionGradients) {
  EXPECT_LT(op_grad_error({{3, 2, 2}}, [](auto& g, auto& x) { return ad::mean_over_rest(g, x[0]); }), kTol);
  EXPECT_LT(op_grad_error({{3, 2, 2}}, [](auto& g, auto& x) { return ad::max_over_rest(g, x[0]); }), kTol);
  EXPECT_LT(op_grad_error({{3, 2, 2}}, [](auto& g, auto& x) { return ad::mean_over_first(g, x[0]); }), kTol);
  EXPECT_LT(op_grad_error({{3, 2, 2}}, [](auto& g, auto& x) { return ad::max_over_first(g, x[0]); }), kTol);
  EXPECT_LT(op_grad_error({{4, 3}}, [](auto& g, auto& x) { return ad::sum_all(g, x[0]); }), kTol);
}

TEST(Autodiff, ShapeOpGradients) {
  EXPECT_LT(op_grad_error({{2, 6}}, [](auto& g, auto& x) { return ad::reshape(g, x[0], Shape{3, 4}); }), kTol);
  EXPECT_LT(op_grad_error({{2, 3}, {1, 3}}, [](auto& g, auto& x) { return ad::concat(g, x); }), kTol);
  EXPECT_LT(op_grad_error({{5, 2}}, [](auto& g, auto& x) { return ad::slice(g, x[0], 1, 3); }), kTol);
  EXPECT_LT(op_grad_error({{5, 2}}, [](auto& g, auto& x) { return ad::row(g, x[0], 4); }), kTol);
}

TEST(Autodiff, SoftmaxFamilyGradients) {
  EXPECT_LT(op_grad_error({{6}}, [](auto& g, auto& x) { return ad::softmax(g, x[0]); }), kTol);
  EXPECT_LT(op_grad_error({{6}}, [](auto& g, auto& x) { return ad::log_softmax_at(g, x[0], 2); }), kTol);
}

TEST(Autodiff, SoftmaxSurvivesLargeLogits) {
  ad::Graph<double> g;
  const auto x = g.constant(Tensor<double>({3}, std::vector<double>{1000.0, 1000.0, -1000.0}));
  const auto& p = g.value(ad::softmax(g, x));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_NEAR(g.value(ad::log_softmax_at(g, x, 0))[0], -std::log(2.0), 1e-12);
}

TEST(Autodiff, ConvolutionAndPoolingGradients) {
  EXPECT_LT(op_grad_error({{2, 6, 6}, {3, 2, 3, 3}, {3}},
                          [](auto& g, auto& x) { return ad::conv2d(g, x[0], x[1], x[2], 2, 1); }),
            kTol);
  EXPECT_LT(op_grad_error({{2, 5, 5}, {1, 2, 3, 3}},
                          [](auto& g, auto& x) { return ad::conv2d(g, x[0], x[1], ad::Var{}, 1, 1); }),
            kTol);
  EXPECT_LT(op_grad_error({{2, 4, 4}}, [](auto& g, auto& x) { return ad::avg_pool(g, x[0], 2); }), kTol);
}

TEST(Autodiff, ConvolutionMatchesDirectSum) {
  Rng rng(5);
  const auto x = random_tensor({2, 5, 5}, rng);
  const auto w = random_tensor({1, 2, 3, 3}, rng);
  ad::Graph<double> g(false);
  const auto& y = g.value(ad::conv2d(g, g.constant(x), g.constant(w), ad::Var{}, 2, 1));
  ASSERT_EQ(y.shape, (Shape{1, 3, 3}));
  for (int oy = 0; oy < 3; ++oy) {
    for (int ox = 0; ox < 3; ++ox) {
      double s = 0;
      for (int c = 0; c < 2; ++c)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = 2 * oy + ky - 1, ix = 2 * ox + kx - 1;
            if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
            s += x[static_cast<std::size_t>((c * 5 + iy) * 5 + ix)] * w[static_cast<std::size_t>((c * 3 + ky) * 3 + kx)];
          }
      EXPECT_NEAR(y[static_cast<std::size_t>(oy * 3 + ox)], s, 1e-12);
    }
  }
}

TEST(Autodiff, LstmCellGradients) {
  EXPECT_LT(op_grad_error({{12}, {3}}, [](auto& g, auto& x) { return ad::lstm_cell(g, x[0], x[1]); }), kTol);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  // d/dx of sum(x * x) through two uses of the same leaf is 2x
  ParamStore<double> store;
  store.add("x", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}));
  ad::Graph<double> g;
  Binder<double> bind(g, store);
  const auto x = bind(0);
  g.backward(ad::sum_all(g, ad::mul(g, x, bind(0))));
  const auto& dx = g.grad(x);
  EXPECT_DOUBLE_EQ(dx[0], 2.0);
  EXPECT_DOUBLE_EQ(dx[1], -4.0);
  EXPECT_DOUBLE_EQ(dx[2], 1.0);
}

TEST(Autodiff, InferenceGraphRefusesBackward) {
  ad::Graph<double> g(false);
  const auto x = g.constant(Tensor<double>({1}, 1.0));
  EXPECT_THROW(g.backward(x), std::logic_error);
}

TEST(Tensor, Ten1RoundTripIsBitExact) {
  Rng rng(3);
  const auto t = random_tensor<float>({3, 4, 5}, rng);
  EXPECT_EQ(decode_ten1(encode_ten1(t)), t);
  const auto bytes = encode_ten1(Tensor<float>({2}, std::vector<float>{1.0f, -0.5f}));
  ASSERT_EQ(bytes.size(), 4u + 4u + 4u + 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TEN1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // rank, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
}

TEST(Tensor, Ten1RejectsCorruptInput) {
  auto bytes = encode_ten1(Tensor<float>({2, 2}, 0.5f));
  bytes[0] = 'X';
  EXPECT_THROW(decode_ten1(bytes), IoError);
  bytes = encode_ten1(Tensor<float>({2, 2}, 0.5f));
  bytes.pop_back();
  EXPECT_THROW(decode_ten1(bytes), IoError);
  EXPECT_THROW(read_ten1("/nonexistent/file.ten"), IoError);
}

TEST(Tensor, RegionViewRoundTrip) {
  Rng rng(4);
  const auto fmap = random_tensor({6, 3, 5}, rng);
  const auto regions = region_view(fmap);
  EXPECT_EQ(regions.shape, (Shape{6, 15}));
  EXPECT_EQ(from_region_view(regions, 3, 5), fmap);
  EXPECT_THROW(from_region_view(regions, 4, 4), ShapeError);
}
