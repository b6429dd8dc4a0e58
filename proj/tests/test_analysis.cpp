#include <gtest/gtest.h>

#include <cmath>

#include "kap/analysis.hpp"
#include "kap/error.hpp"
#include "kap/stats.hpp"
#include "support.hpp"

using namespace kap;

namespace {

// O(n^2) average ranks: 1 + #smaller + (#equal - 1) / 2
std::vector<double> naive_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

double naive_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(Spearman, HandValues) {
  const double x[] = {1, 2, 3, 4, 5};
  const double up[] = {2, 4, 6, 8, 100};
  const double down[] = {5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, up), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-15);
  const double flat[] = {3, 3, 3, 3, 3};
  EXPECT_EQ(spearman(x, flat), 0.0);
  const double ties[] = {1, 2, 2, 3};
  EXPECT_EQ(average_ranks(ties), (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(Topography, IdenticalKernelsGiveZero) {
  Tensor k({9, 1, 3, 3});
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = static_cast<double>(i % 9) - 4.0;
  const TopographyReport r = kernel_topography(k, 3, 3);
  EXPECT_EQ(r.pairwise.size(), 36u);
  for (const auto& p : r.pairwise) EXPECT_EQ(p.dissimilarity, 0.0);
  EXPECT_EQ(r.rank_correlation, 0.0);
}

TEST(Topography, CoordinateKernelsMatchDirectComputation) {
  const std::size_t rows = 4, cols = 5;
  Tensor k({rows * cols, 2});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      k[(r * cols + c) * 2] = static_cast<double>(r + 1);
      k[(r * cols + c) * 2 + 1] = static_cast<double>(c + 1);
    }
  std::vector<double> dist, dis;
  for (std::size_t a = 0; a < rows * cols; ++a)
    for (std::size_t b = a + 1; b < rows * cols; ++b) {
      const double ar = a / cols, ac = a % cols, br = b / cols, bc = b % cols;
      dist.push_back(std::hypot(ar - br, ac - bc));
      const double dot = (ar + 1) * (br + 1) + (ac + 1) * (bc + 1);
      const double cosv = dot / (std::hypot(ar + 1, ac + 1) * std::hypot(br + 1, bc + 1));
      double d = 1 - cosv;
      if (d < 1e-12) d = 0;
      dis.push_back(d);
    }
  const double want = naive_pearson(naive_ranks(dist), naive_ranks(dis));
  const TopographyReport rep = kernel_topography(k, rows, cols);
  EXPECT_GT(want, 0.0);
  EXPECT_NEAR(rep.rank_correlation, want, 1e-12);
  for (const auto& p : rep.pairwise) {
    EXPECT_GE(p.dissimilarity, 0.0);
    EXPECT_LE(p.dissimilarity, 2.0);
  }
}

TEST(Topography, RandomKernelsAreUncorrelated) {
  double total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const TopographyReport r = kernel_topography(kaptest::random_tensor({36, 1, 3, 3}, rng), 6, 6);
    total += std::abs(r.rank_correlation);
  }
  EXPECT_LT(total / 100, 0.1);
}

TEST(Topography, NeedsFollowingGrid) {
  const Network plain = Network::build(parse_network_spec("input = 1x4x4\nclasses = 2\nlayer.0 = conv2d out=4\n"
                                                          "layer.1 = relu\nlayer.2 = flatten\n"
                                                          "layer.3 = dense out=2\n"),
                                       1);
  EXPECT_THROW(topography_report(plain, 0), UsageError);
  const Network line = Network::build(parse_network_spec("input = 1x4x4\nclasses = 2\nlayer.0 = conv2d out=4\n"
                                                         "layer.1 = kap1d K=3\nlayer.2 = flatten\n"
                                                         "layer.3 = dense out=2\n"),
                                      1);
  EXPECT_THROW(topography_report(line, 0), UsageError);
  const Network grid = Network::build(parse_network_spec("input = 1x4x4\nclasses = 2\nlayer.0 = conv2d out=6\n"
                                                         "layer.1 = relu\nlayer.2 = kap2d K=3 grid=2x3\n"
                                                         "layer.3 = flatten\nlayer.4 = dense out=2\n"),
                                      1);
  const TopographyReport r = topography_report(grid, 0);
  EXPECT_EQ(r.rows, 2u);
  EXPECT_EQ(r.cols, 3u);
  EXPECT_EQ(r.coords[4], (std::pair<std::size_t, std::size_t>{1, 1}));
  EXPECT_THROW(topography_report(grid, 1), UsageError);
}

TEST(Smoothness, ConstantAndCheckerboard) {
  EXPECT_EQ(kernel_smoothness(Tensor({2, 3, 3, 3}, 0.7)), 0.0);
  Tensor cb({1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) cb[i] = ((i / 3 + i % 3) % 2) ? -1.0 : 1.0;
  EXPECT_DOUBLE_EQ(kernel_smoothness(cb), 4.0);
  Tensor row({1, 4}, {1, -1, 1, -1});
  EXPECT_DOUBLE_EQ(kernel_smoothness(row), 4.0);
}

TEST(Smoothness, SmoothingContracts) {
  KapSpec spec;
  spec.kernel_size = 3;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Tensor w = kaptest::random_tensor({8 + seed % 9, 9}, rng);
    EXPECT_LE(kernel_smoothness(kap_as_weight_smoothing(w, spec)), kernel_smoothness(w)) << seed;
  }
  Rng rng(5);
  const Tensor conv = kaptest::random_tensor({9, 2, 3, 3}, rng);
  KapSpec grid = spec;
  grid.arrangement = Arrangement::grid;
  EXPECT_LE(kernel_smoothness(smooth_kernels(conv, grid)), kernel_smoothness(conv));
}

TEST(GradientProfile, ZeroOffsetIsZero) {
  const GradientProfile p = gradient_difference_profile(16, 3, 1);
  ASSERT_EQ(p.rows.size(), 4u);
  EXPECT_EQ(p.rows[0].d, 0u);
  EXPECT_EQ(p.rows[0].mean_norm, 0.0);
}

TEST(GradientProfile, ConstantOutgoingWeightsCancel) {
  for (std::size_t K : {3, 5}) {
    const GradientProfile p = gradient_difference_profile(24, K, 2, 8, true);
    for (const auto& r : p.rows) EXPECT_NEAR(r.mean_norm, 0.0, 1e-12) << "K=" << K << " d=" << r.d;
  }
}

TEST(GradientProfile, AutodiffAgreesWithWindowSums) {
  for (std::size_t K : {3, 5, 7})
    for (std::size_t nk : {7, 16, 64})
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GradientProfile p = gradient_difference_profile(nk, K, seed);
        EXPECT_LT(p.max_autodiff_error, 1e-10);
        if (p.rows[1].pairs > 0) EXPECT_GT(p.rows[1].mean_norm, 0.0);
      }
  EXPECT_THROW(gradient_difference_profile(8, 4, 1), ParameterError);
}

TEST(Variance, MatchesSigmaSquaredOverK) {
  for (std::size_t K : {1, 2, 4, 9, 16}) {
    const VarianceCheck v = variance_reduction_check(K, 1.0, 100000, K);
    EXPECT_DOUBLE_EQ(v.predicted, 1.0 / K);
    EXPECT_NEAR(v.empirical, v.predicted, 0.1 * v.predicted) << "K=" << K;
  }
  EXPECT_EQ(variance_reduction_check(4, 0.0, 1000, 1).empirical, 0.0);
}

TEST(Perturbation, ZeroBudgetsGiveZeroProfile) {
  const Network net = Network::build(parse_network_spec("input = 1x4x4\nclasses = 2\nlayer.0 = conv2d out=4\n"
                                                        "layer.1 = kap2d K=3\nlayer.2 = relu\nlayer.3 = flatten\n"
                                                        "layer.4 = dense out=2\n"),
                                     1);
  Rng rng(2);
  Tensor x({3, 1, 4, 4});
  for (auto& v : x.data()) v = rng.uniform();
  const int labels[] = {0, 1, 0};
  AttackConfig a;
  a.epsilon = 0.0;
  a.iterations = 2;
  const PerturbationProfile p = perturbation_profile(net, x, labels, a, 0.0, 3, 1);
  ASSERT_EQ(p.layers.size(), 6u);
  EXPECT_EQ(p.layers[0].layer, "input");
  EXPECT_EQ(p.layers[2].layer, "1:kap2d");
  for (const auto& l : p.layers) {
    EXPECT_EQ(l.gaussian_mean, 0.0);
    EXPECT_EQ(l.adversarial_mean, 0.0);
  }
}

TEST(Perturbation, IdentityNetworkReproducesInputDistances) {
  const Network net = Network::build(parse_network_spec("input = 16\nclasses = 16\nlayer.0 = flatten\n"), 1);
  Tensor x({2, 16});
  for (std::size_t i = 0; i < 32; ++i) x[i] = 0.25 + 0.5 * (i % 2);
  const int labels[] = {0, 3};
  AttackConfig a;
  a.norm = Norm::l2;
  a.epsilon = 0.3;
  a.step_size = 0.1;
  a.iterations = 5;
  const double sigma = 0.01;  // keeps the draws away from the box
  const PerturbationProfile p = perturbation_profile(net, x, labels, a, sigma, 400, 2);
  ASSERT_EQ(p.layers.size(), 2u);
  EXPECT_DOUBLE_EQ(p.layers[0].gaussian_mean, p.layers[1].gaussian_mean);
  EXPECT_DOUBLE_EQ(p.layers[0].adversarial_mean, p.layers[1].adversarial_mean);
  double norm = 0;
  for (std::size_t i = 0; i < 16; ++i) norm += x[i] * x[i];
  norm = std::sqrt(norm);
  // E||N(0, s^2 I_16)|| = s * sqrt(2) * Gamma(8.5) / Gamma(8)
  const double chi = std::sqrt(2.0) * std::exp(std::lgamma(8.5) - std::lgamma(8.0));
  EXPECT_NEAR(p.layers[0].gaussian_mean, sigma * chi / norm, 0.02 * sigma * chi / norm);
  EXPECT_LE(p.layers[0].adversarial_mean, 0.3 / norm + 1e-12);
  EXPECT_GT(p.layers[0].adversarial_mean, 0.0);
}

TEST(KernelSheet, WritesTiledGraymap) {
  kaptest::TempDir dir("pgm");
  Rng rng(1);
  Tensor k = kaptest::random_tensor({6, 2, 3, 3}, rng);
  for (std::size_t i = 0; i < 18; ++i) k[18 + i] = 0.5;  // kernel 1 constant
  write_kernel_sheet(k, 2, 3, dir.file("s.pgm"));
  const std::string bytes = kaptest::slurp(dir.file("s.pgm"));
  const std::string header = "P5\n13 9\n255\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  const std::string pix = bytes.substr(header.size());
  ASSERT_EQ(pix.size(), 13u * 9u);
  EXPECT_EQ(static_cast<unsigned char>(pix[0]), 0);
  // kernel 1 occupies columns 5..7 of rows 1..3
  EXPECT_EQ(static_cast<unsigned char>(pix[1 * 13 + 5]), 128);
  unsigned char lo = 255, hi = 0;
  for (std::size_t y = 1; y <= 3; ++y)
    for (std::size_t x = 1; x <= 3; ++x) {
      lo = std::min(lo, static_cast<unsigned char>(pix[y * 13 + x]));
      hi = std::max(hi, static_cast<unsigned char>(pix[y * 13 + x]));
    }
  EXPECT_EQ(lo, 0);
  EXPECT_EQ(hi, 255);
  EXPECT_THROW(write_kernel_sheet(k, 2, 2, dir.file("t.pgm")), DimensionError);
}
