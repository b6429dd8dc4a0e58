#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kap/attacks.hpp"
#include "kap/kap.hpp"
#include "kap/network.hpp"

namespace kap {

struct KernelPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double grid_distance = 0.0;
  double dissimilarity = 0.0;  // 1 - cosine similarity, in [0, 2]
};

struct TopographyReport {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::pair<std::size_t, std::size_t>> coords;  // per kernel (row, col)
  std::vector<KernelPair> pairwise;
  double rank_correlation = 0.0;
};

/// Spearman correlation between sheet distance and cosine dissimilarity of
/// the flattened kernels (rows of `kernels` after flattening from axis 1),
/// placed row-major on a rows x cols sheet.
TopographyReport kernel_topography(const Tensor& kernels, std::size_t rows, std::size_t cols);

/// Topography of layer `layer_index` (conv or dense) using the sheet of the
/// grid KAP or KMP that follows it. Throws UsageError when no grid follows.
TopographyReport topography_report(const Network& net, std::size_t layer_index);

/// Mean squared difference between spatially adjacent weights within each
/// kernel, averaged over kernels. Conv kernels [O,I,k,k] use horizontal and
/// vertical neighbours of every k x k slice; dense rows [O,D] use consecutive
/// entries.
double kernel_smoothness(const Tensor& weights);
double kernel_smoothness(const Network& net, std::size_t layer_index);

/// Smooths conv kernels [O,I,k,k] or dense rows [O,D] across kernels with KAP.
Tensor smooth_kernels(const Tensor& weights, const KapSpec& spec);

struct GradientDifference {
  std::size_t d = 0;
  double mean_norm = 0.0;  // over interior pairs (i, i + d)
  std::size_t pairs = 0;
};

struct GradientProfile {
  std::vector<GradientDifference> rows;  // d = 0..K
  double max_autodiff_error = 0.0;       // closed form vs backward, all i and d
};

/// One hidden linear layer z = W1 x (N_k units), KAP with window K and
/// divisor K, output y = w2 . zbar. Compares dy/dW1_i - dy/dW1_{i+d} from
/// backward with (1/K)(window sum of w2 at i - window sum at i+d) x.
GradientProfile gradient_difference_profile(std::size_t n_k, std::size_t kernel_size, std::uint64_t seed,
                                            std::size_t input_dim = 8, bool constant_w2 = false);

struct VarianceCheck {
  double empirical = 0.0;
  double predicted = 0.0;
};

/// Variance of one KAP window (stride 1, all K members valid) fed K i.i.d.
/// N(0, sigma^2) channels.
VarianceCheck variance_reduction_check(std::size_t kernel_size, double sigma, std::size_t n_samples,
                                       std::uint64_t seed);

struct LayerPerturbation {
  std::string layer;  // "input" or "<index>:<kind>"
  double gaussian_mean = 0.0;
  double gaussian_std = 0.0;
  double adversarial_mean = 0.0;
  double adversarial_std = 0.0;
};

struct PerturbationProfile {
  std::vector<LayerPerturbation> layers;  // input first, logits last

  /// adversarial_mean / gaussian_mean at the final layer.
  double final_ratio() const;
};

/// Per-layer ||f_l(x + delta) - f_l(x)|| / ||f_l(x)|| (raw distance where
/// ||f_l(x)|| is 0) for n_draws Gaussian deltas and n_draws PGD runs with
/// distinct random starts, over every sample of x.
PerturbationProfile perturbation_profile(const Network& net, const Tensor& x, std::span<const int> labels,
                                         const AttackConfig& attack, double sigma, std::size_t n_draws,
                                         std::uint64_t seed);

/// First-layer style sheet: each conv kernel (averaged over input channels)
/// scaled to 0..255 on its own and tiled by sheet position, as binary PGM.
void write_kernel_sheet(const Tensor& kernels, std::size_t rows, std::size_t cols, const std::string& path);

}  // namespace kap
