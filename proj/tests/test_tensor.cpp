#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pvu/nn/tensor.hpp"
#include "pvu/rng.hpp"

using namespace pvu;
using nn::Shape;
using T64 = nn::Tensor<double>;

namespace {

using Fn = std::function<T64(const std::vector<T64>&)>;

T64 random_tensor(Rng& rng, const Shape& s, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(nn::numel(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T64::from(s, v, true);
}

// Contracts the output with fixed random weights so every output element
// carries a distinct gradient.
double contract(const T64& out, const std::vector<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * w[i];
  return s;
}

// Relative error ||analytic - numeric|| / (||analytic|| + ||numeric||) over all inputs.
double gradient_error(const Fn& f, std::vector<T64> inputs, Rng& rng) {
  const auto probe = f(inputs);
  std::vector<double> w(probe.numel());
  for (auto& x : w) x = rng.uniform(-1, 1);
  for (auto& in : inputs) in.zero_grad();
  auto out = f(inputs);
  auto loss = nn::sum(nn::mul(out, T64::from(out.shape(), w)));
  nn::backward(loss);

  const double h = 1e-5;
  double diff = 0, norm_a = 0, norm_n = 0;
  for (auto& in : inputs) {
    for (std::size_t k = 0; k < in.numel(); ++k) {
      const double x = in.values()[k];
      in.values()[k] = x + h;
      const double up = contract(f(inputs), w);
      in.values()[k] = x - h;
      const double down = contract(f(inputs), w);
      in.values()[k] = x;
      const double num = (up - down) / (2 * h);
      const double ana = in.grad()[k];
      diff += (ana - num) * (ana - num);
      norm_a += ana * ana;
      norm_n += num * num;
    }
  }
  const double denom = std::sqrt(norm_a) + std::sqrt(norm_n);
  return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
}

void check_gradient(const std::string& name, const std::vector<Shape>& shapes, const Fn& f, double lo = -1.0,
                    double hi = 1.0) {
  Rng rng(std::hash<std::string>{}(name) & 0xFFFF);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<T64> in;
    for (const auto& s : shapes) in.push_back(random_tensor(rng, s, lo, hi));
    EXPECT_LT(gradient_error(f, in, rng), 1e-4) << name << " trial " << trial;
  }
}

}  // namespace

TEST(TensorForward, SoftmaxOfZeros) {
  const auto s = nn::softmax(T64::from({1, 2}, {0, 0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(TensorForward, SoftmaxRowsSumToOne) {
  Rng rng(1);
  const auto s = nn::softmax(random_tensor(rng, {7, 13}, -30, 30));
  for (std::size_t r = 0; r < 7; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 13; ++c) sum += s[r * 13 + c];
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
  const auto big = nn::softmax(T64::from({3}, {1000, 1000, -1000}));
  EXPECT_NEAR(big[0], 0.5, 1e-12);
  const auto ls = nn::log_softmax(T64::from({3}, {1000, 1000, -1000}));
  EXPECT_NEAR(ls[0], std::log(0.5), 1e-12);
}

TEST(TensorForward, LayernormMomentsAndShiftInvariance) {
  Rng rng(2);
  const auto x = random_tensor(rng, {5, 16}, -3, 3);
  const auto y = nn::layernorm(x, 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += y[r * 16 + c];
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (y[r * 16 + c] - m) * (y[r * 16 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v / 16, 1.0, 1e-6);
  }
  const auto shifted = nn::layernorm(nn::add_scalar(x, 7.5));
  const auto base = nn::layernorm(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(shifted[i], base[i], 1e-9);
}

TEST(TensorForward, MatmulMatchesTripleLoop) {
  Rng rng(3);
  const auto a = random_tensor(rng, {2, 3});
  const auto b = random_tensor(rng, {3, 4});
  const auto c = nn::matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 4}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 4 + j];
      EXPECT_NEAR(c[i * 4 + j], s, 1e-12);
    }
  const auto bt = nn::transpose(b, 0, 1);
  const auto c2 = nn::matmul(a, bt, true);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(c2[i], c[i], 1e-12);

  const auto ba = random_tensor(rng, {3, 2, 5});
  const auto bb = random_tensor(rng, {3, 5, 2});
  const auto bc = nn::matmul(ba, bb);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += ba[n * 10 + i * 5 + k] * bb[n * 10 + k * 2 + j];
        EXPECT_NEAR(bc[n * 4 + i * 2 + j], s, 1e-12);
      }
}

TEST(TensorForward, GeluValues) {
  const auto g = nn::gelu(T64::from({3}, {0.0, 1.0, -1.0}));
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_NEAR(g[1], 0.8413447460685429, 1e-12);
  EXPECT_NEAR(g[2], -0.15865525393145707, 1e-12);
}

TEST(TensorForward, MaxRoutesToLowestIndexOnTies) {
  auto x = T64::from({2, 3}, {1, 5, 5, 2, 2, 0}, true);
  auto m = nn::max_axis(x, 1);
  EXPECT_EQ(m[0], 5);
  EXPECT_EQ(m[1], 2);
  nn::backward(nn::sum(m));
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 1, 0, 1, 0, 0}));
  auto y = T64::from({3}, {4, 1, 1}, true);
  nn::backward(nn::sum(nn::min_axis(y, 0)));
  EXPECT_EQ(y.grad(), (std::vector<double>{0, 1, 0}));
}

TEST(TensorForward, ShapeErrorsNameBothShapes) {
  const auto a = T64::zeros({2, 3});
  const auto b = T64::zeros({4, 5});
  try {
    nn::matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
  }
  EXPECT_THROW(nn::add(T64::zeros({2, 3}), T64::zeros({3, 2})), Error);
  EXPECT_THROW(nn::concat<double>({T64::zeros({2, 3}), T64::zeros({2, 4})}, 0), Error);
  EXPECT_THROW(nn::slice(T64::zeros({2, 3}), 1, 2, 2), Error);
  EXPECT_THROW(nn::gather(T64::zeros({2, 3}), {2}), Error);
}

TEST(Backward, SumGivesOnes) {
  auto w = T64::from({2, 2}, {1, 2, 3, 4}, true);
  nn::backward(nn::sum(w));
  EXPECT_EQ(w.grad(), (std::vector<double>{1, 1, 1, 1}));
}

TEST(Backward, DisconnectedParameterHasZeroGradient) {
  auto w = T64::from({2}, {1, 2}, true);
  auto u = T64::from({2}, {3, 4}, true);
  u.zero_grad();
  nn::backward(nn::sum(nn::square(w)));
  EXPECT_EQ(u.grad(), (std::vector<double>{0, 0}));
}

TEST(Backward, TwiceIsErrorAndNonScalarIsError) {
  auto w = T64::from({2}, {1, 2}, true);
  auto loss = nn::sum(nn::square(w));
  nn::backward(loss);
  try {
    nn::backward(loss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GraphConsumed);
  }
  EXPECT_THROW(nn::backward(nn::square(w)), Error);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  auto x = T64::from({1}, {3}, true);
  auto y = nn::mul(x, x);
  nn::backward(nn::sum(nn::add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, ChamferMinCompositionMatchesFiniteDifferences) {
  check_gradient("chamfer", {{3, 3}, {3, 3}}, [](const std::vector<T64>& in) {
    const auto d = nn::pairwise_sqdist(in[0], in[1]);
    return nn::add(nn::mean(nn::min_axis(d, 1)), nn::mean(nn::min_axis(d, 0)));
  });
}

TEST(GradCheck, Elementwise) {
  check_gradient("add", {{3, 4}, {4}}, [](const std::vector<T64>& in) { return nn::add(in[0], in[1]); });
  check_gradient("sub", {{2, 1, 3}, {4, 1}}, [](const std::vector<T64>& in) { return nn::sub(in[0], in[1]); });
  check_gradient("mul", {{3, 4}, {3, 1}}, [](const std::vector<T64>& in) { return nn::mul(in[0], in[1]); });
  check_gradient("scale", {{5}}, [](const std::vector<T64>& in) { return nn::scale(in[0], 2.5); });
  check_gradient("add_scalar", {{5}}, [](const std::vector<T64>& in) { return nn::add_scalar(in[0], -1.5); });
  check_gradient("square", {{5}}, [](const std::vector<T64>& in) { return nn::square(in[0]); });
  check_gradient("sqrt", {{5}}, [](const std::vector<T64>& in) { return nn::sqrt(in[0]); }, 0.5, 2.0);
  check_gradient("gelu", {{2, 6}}, [](const std::vector<T64>& in) { return nn::gelu(in[0]); }, -3, 3);
  check_gradient("neg", {{4}}, [](const std::vector<T64>& in) { return nn::neg(in[0]); });
}

TEST(GradCheck, ShapeOps) {
  check_gradient("reshape", {{2, 6}}, [](const std::vector<T64>& in) { return nn::reshape(in[0], {3, 4}); });
  check_gradient("transpose", {{2, 3, 4}}, [](const std::vector<T64>& in) { return nn::transpose(in[0], 0, 2); });
  check_gradient("concat", {{2, 3}, {2, 2}}, [](const std::vector<T64>& in) { return nn::concat(in, 1); });
  check_gradient("slice", {{4, 5}}, [](const std::vector<T64>& in) { return nn::slice(in[0], 1, 1, 3); });
  check_gradient("gather", {{4, 3}}, [](const std::vector<T64>& in) { return nn::gather(in[0], {3, 0, 3, 1}); });
  check_gradient("scatter", {{3, 2}}, [](const std::vector<T64>& in) { return nn::scatter(in[0], {4, 0, 4}, 5); });
  check_gradient("expand", {{2, 1, 3}}, [](const std::vector<T64>& in) { return nn::expand(in[0], 1, 4); });
}

TEST(GradCheck, Matmul) {
  check_gradient("matmul", {{2, 3}, {3, 4}}, [](const std::vector<T64>& in) { return nn::matmul(in[0], in[1]); });
  check_gradient("matmul_shared", {{2, 3, 4}, {4, 5}}, [](const std::vector<T64>& in) { return nn::matmul(in[0], in[1]); });
  check_gradient("matmul_batched", {{2, 3, 4}, {2, 4, 2}},
                 [](const std::vector<T64>& in) { return nn::matmul(in[0], in[1]); });
  check_gradient("matmul_tb", {{2, 3, 4}, {2, 5, 4}},
                 [](const std::vector<T64>& in) { return nn::matmul(in[0], in[1], true); });
}

TEST(GradCheck, Reductions) {
  check_gradient("max_axis", {{3, 5}}, [](const std::vector<T64>& in) { return nn::max_axis(in[0], 1); });
  check_gradient("max_axis0", {{3, 5, 2}}, [](const std::vector<T64>& in) { return nn::max_axis(in[0], 0, true); });
  check_gradient("min_axis", {{3, 5}}, [](const std::vector<T64>& in) { return nn::min_axis(in[0], 0); });
  check_gradient("sum_axis", {{3, 4, 2}}, [](const std::vector<T64>& in) { return nn::sum_axis(in[0], 1); });
  check_gradient("mean_axis", {{3, 4}}, [](const std::vector<T64>& in) { return nn::mean_axis(in[0], 1, true); });
  check_gradient("sum", {{3, 4}}, [](const std::vector<T64>& in) { return nn::sum(in[0]); });
  check_gradient("mean", {{3, 4}}, [](const std::vector<T64>& in) { return nn::mean(in[0]); });
}

TEST(GradCheck, Normalizations) {
  check_gradient("softmax", {{3, 5}}, [](const std::vector<T64>& in) { return nn::softmax(in[0]); }, -2, 2);
  check_gradient("log_softmax", {{3, 5}}, [](const std::vector<T64>& in) { return nn::log_softmax(in[0]); }, -2, 2);
  check_gradient("layernorm", {{3, 6}}, [](const std::vector<T64>& in) { return nn::layernorm(in[0]); }, -2, 2);
  check_gradient("pairwise", {{2, 3, 3}, {2, 4, 3}},
                 [](const std::vector<T64>& in) { return nn::pairwise_sqdist(in[0], in[1]); });
}

TEST(TensorForward, FloatAndDoubleAgree) {
  Rng rng(5);
  const auto a = random_tensor(rng, {4, 8});
  const auto b = random_tensor(rng, {8, 3});
  const auto d = nn::softmax(nn::matmul(a, b));
  const auto f = nn::softmax(nn::matmul(nn::cast<float>(a), nn::cast<float>(b)));
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_NEAR(f[i], d[i], 1e-5);
}
