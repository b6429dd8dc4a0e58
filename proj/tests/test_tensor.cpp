#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "kap/error.hpp"
#include "kap/ops.hpp"
#include "kap/tape.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace kap;
using kaptest::random_tensor;

TEST(Tensor, RejectsInconsistentShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({2, 0}, std::vector<double>{}), DimensionError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6)));
}

TEST(Tensor, RejectsNonFinite) {
  EXPECT_THROW(Tensor({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), ContractError);
  EXPECT_THROW(Tensor({1}, {std::numeric_limits<double>::infinity()}), ContractError);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Matmul, IdentityAndScalar) {
  Tape tape;
  Var id = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var m = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(matmul(id, m).value().values(), (std::vector<double>{1, 2, 3, 4}));
  Var a = tape.constant(Tensor({1, 1}, {2}));
  Var b = tape.constant(Tensor({1, 1}, {3}));
  EXPECT_DOUBLE_EQ(matmul(a, b).value().item(), 6.0);
}

TEST(Matmul, ShapeMismatch) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Matmul, SumLossGradient) {
  // loss = sum(A B): dL/dA[i][k] = sum_j B[k][j], dL/dB[k][j] = sum_i A[i][k]
  Tape tape;
  Var a = tape.variable(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = tape.variable(Tensor({2, 2}, {1, 2, 3, 4}));
  tape.backward(sum(matmul(a, b)));
  EXPECT_EQ(tape.grad(a), (std::vector<double>{3, 7, 3, 7}));
  EXPECT_EQ(tape.grad(b), (std::vector<double>{1, 1, 1, 1}));

  kap::Rng rng(3);
  auto g = kaptest::check_gradients([](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
                                    {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}, 3);
  EXPECT_LT(g.max_rel_error, 1e-6);
}

TEST(Relu, Values) {
  Tape tape;
  Var x = tape.constant(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(relu(x).value().values(), (std::vector<double>{0, 0, 2}));
}

TEST(Noise, ZeroSigmaIsIdentity) {
  Rng rng(1);
  Tape tape;
  Tensor x = random_tensor({4, 5}, rng);
  Var v = tape.constant(x);
  EXPECT_EQ(gaussian_noise_add(v, 0.0, rng).value().values(), x.values());
}

TEST(Noise, SampleVariance) {
  Rng rng(7);
  Tape tape;
  Var z = tape.constant(Tensor({100000}));
  const Tensor out = gaussian_noise_add(z, 0.1, rng).value();
  double m = 0, s = 0;
  for (double v : out.values()) m += v;
  m /= out.size();
  for (double v : out.values()) s += (v - m) * (v - m);
  s /= out.size() - 1;
  EXPECT_NEAR(s, 0.01, 0.01 * 0.05);
}

TEST(Noise, NegativeSigmaRejected) {
  Rng rng(1);
  Tape tape;
  Var z = tape.constant(Tensor({3}));
  EXPECT_THROW(gaussian_noise_add(z, -0.1, rng), ParameterError);
}

TEST(Noise, BackwardIsIdentity) {
  Rng rng(2);
  Tape tape;
  Var x = tape.variable(Tensor({3}, {1, 2, 3}));
  tape.backward(sum(mul_scalar(gaussian_noise_add(x, 0.5, rng), 2.0)));
  EXPECT_EQ(tape.grad(x), (std::vector<double>{2, 2, 2}));
}

namespace {

Tensor brute_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor out({n, co, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          double acc = b[o];
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long y = static_cast<long>(r * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(c * stride + v) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                acc += w[((o * ci + i) * k + u) * k + v] * x[((s * ci + i) * h + y) * wd + xx];
              }
          out[((s * co + o) * oh + r) * ow + c] = acc;
        }
  return out;
}

}  // namespace

TEST(Conv2d, PointwiseScaling) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 3, 3}, 1.0));
  Var w = tape.constant(Tensor({1, 1, 1, 1}, {2.0}));
  Var b = tape.constant(Tensor({1}));
  const Tensor y = conv2d(x, w, b, 1, 0).value();
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 2.0);
}

TEST(Conv2d, ImpulseResponse) {
  Tensor img({1, 1, 5, 5});
  img[2 * 5 + 2] = 1.0;
  Tensor k({1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) k[i] = static_cast<double>(i + 1) / 9.0;
  Tape tape;
  const Tensor y = conv2d(tape.constant(img), tape.constant(k), tape.constant(Tensor({1})), 1, 1).value();
  // cross-correlation: the imprint is the kernel flipped around the delta
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const long u = 2 - static_cast<long>(r) + 1, v = 2 - static_cast<long>(c) + 1;
      const double want = (u >= 0 && u < 3 && v >= 0 && v < 3) ? k[u * 3 + v] : 0.0;
      EXPECT_DOUBLE_EQ(y[r * 5 + c], want);
    }
}

TEST(Conv2d, MatchesNestedLoops) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor({2, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {1, 0}, {2, 1}, {2, 0}}) {
      Tape tape;
      const Tensor got = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride, pad).value();
      const Tensor want = brute_conv(x, w, b, stride, pad);
      ASSERT_EQ(got.shape(), want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
  }
}

TEST(Conv2d, NonIntegralOutputRejected) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 1, 4, 4}));
  Var w = tape.constant(Tensor({1, 1, 3, 3}));
  Var b = tape.constant(Tensor({1}));
  EXPECT_THROW(conv2d(x, w, b, 2, 0), DimensionError);
  Var w2 = tape.constant(Tensor({1, 2, 3, 3}));
  EXPECT_THROW(conv2d(x, w2, b, 1, 1), DimensionError);
}

TEST(Backward, LinearLossGradientIsInput) {
  Tape tape;
  Tensor xv({4}, {1, -2, 3, 0.5});
  Var w = tape.variable(Tensor({4}, {0.1, 0.2, 0.3, 0.4}));
  tape.backward(sum(mul(w, tape.constant(xv))));
  EXPECT_EQ(tape.grad(w), xv.values());
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var w = tape.variable(Tensor({2}, {1, 2}));
  EXPECT_THROW(tape.backward(relu(w)), ContractError);
}

TEST(Backward, ForeignVarRejected) {
  Tape tape;
  Tape other;
  Var x = other.variable(Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tape tape;
  Var w = tape.variable(Tensor({2}, {1, 2}));
  Var loss = sum(mul_scalar(w, 3.0));
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_EQ(tape.grad(w), (std::vector<double>{6, 6}));
  tape.zero_grad();
  tape.backward(loss);
  EXPECT_EQ(tape.grad(w), (std::vector<double>{3, 3}));
}

TEST(Backward, LinearInLossScale) {
  Rng rng(11);
  Tensor xv = random_tensor({3, 4}, rng);
  Tensor wv = random_tensor({2, 4}, rng);
  Tensor bv = random_tensor({2}, rng);
  std::vector<double> g1, g2;
  for (double scale : {1.0, -2.5}) {
    Tape tape;
    Var w = tape.variable(wv);
    Var y = relu(linear(tape.constant(xv), w, tape.constant(bv)));
    tape.backward(mul_scalar(sum(y), scale));
    (scale == 1.0 ? g1 : g2) = tape.grad(w);
  }
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], -2.5 * g1[i], 1e-12);
}

TEST(Backward, ShallowNetworkGradients) {
  // y = w2 . (W1 x): dy/dW1_i = w2_i x, dy/dw2_i = W1_i x
  Rng rng(5);
  const std::size_t nk = 6, d = 4;
  Tensor x = random_tensor({1, d}, rng);
  Tensor w1 = random_tensor({nk, d}, rng);
  Tensor w2 = random_tensor({1, nk}, rng);
  Tape tape;
  Var W1 = tape.variable(w1);
  Var W2 = tape.variable(w2);
  Var z = linear(tape.constant(x), W1, tape.constant(Tensor({nk})));
  tape.backward(sum(mul(z, W2)));
  for (std::size_t i = 0; i < nk; ++i) {
    double wx = 0;
    for (std::size_t j = 0; j < d; ++j) {
      EXPECT_NEAR(tape.grad(W1)[i * d + j], w2[i] * x[j], 1e-14);
      wx += w1[i * d + j] * x[j];
    }
    EXPECT_NEAR(tape.grad(W2)[i], wx, 1e-14);
  }
}

TEST(Backward, ThreeLayerNetworkFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    auto g = kaptest::check_gradients(
        [](Tape& tape, const std::vector<Var>& v) {
          Var h = relu(conv2d(v[0], v[1], v[2], 1, 1));
          h = spatial_avg_pool(h, 2, 2);
          h = flatten(h, 1);
          return linear(h, v[3], tape.constant(Tensor({2}, {0.1, -0.1})));
        },
        {random_tensor({2, 1, 4, 4}, rng), random_tensor({3, 1, 3, 3}, rng), random_tensor({3}, rng),
         random_tensor({2, 12}, rng)},
        seed, 1e-5);
    EXPECT_LT(g.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, AllLayerTypesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (const auto& r : kaptest::layer_gradient_checks(seed)) {
      EXPECT_GT(r.checked, 0u);
      EXPECT_LT(r.max_rel_error, 1e-4) << r.layer << " seed " << seed;
    }
}

TEST(CrossEntropy, MatchesHandComputation) {
  Tape tape;
  Var logits = tape.variable(Tensor({1, 3}, {1.0, 2.0, 0.5}));
  const int label[] = {1};
  Var loss = cross_entropy(logits, label);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  EXPECT_NEAR(loss.value().item(), -std::log(std::exp(2.0) / z), 1e-14);
  tape.backward(loss);
  EXPECT_NEAR(tape.grad(logits)[0], std::exp(1.0) / z, 1e-14);
  EXPECT_NEAR(tape.grad(logits)[1], std::exp(2.0) / z - 1.0, 1e-14);
}

TEST(Ops, DifferentTapesRejected) {
  Tape a, b;
  EXPECT_THROW(add(a.constant(Tensor({2})), b.constant(Tensor({2}))), ContractError);
}
