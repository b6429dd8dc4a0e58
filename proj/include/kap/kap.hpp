#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "kap/tape.hpp"

namespace kap {

enum class Arrangement { line, grid };

/// Kernel pooling hyperparameters.
///
/// Windows follow average pooling with (K-1)/2 padding on each side: output i
/// along an axis covers inputs [S*i - (K-1)/2, S*i - (K-1)/2 + K - 1]. For odd
/// K that window is centred on S*i. Padded positions carry zero weight, so
/// edge windows divide by the number of valid entries unless `divide_by_k` is
/// set, in which case every window divides by K (K^2 on a grid).
struct KapSpec {
  std::size_t kernel_size = 3;
  std::size_t stride = 1;
  Arrangement arrangement = Arrangement::line;
  // Sheet dimensions for the grid arrangement; 0 x 0 means a square sheet.
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  bool divide_by_k = false;

  bool operator==(const KapSpec&) const = default;
};

/// One output channel: the input channels it pools and its divisor.
struct KapWindow {
  std::vector<std::size_t> members;  // ascending flat channel indices
  double divisor = 1.0;
};

struct WindowPlan {
  std::size_t in_channels = 0;
  std::size_t out_rows = 0;  // 1 for the line arrangement
  std::size_t out_cols = 0;
  std::vector<KapWindow> windows;

  std::size_t out_channels() const { return windows.size(); }
};

/// Grid (rows, cols) for `channels` kernels: explicit, or square by default.
std::pair<std::size_t, std::size_t> resolve_grid(const KapSpec& spec, std::size_t channels);

WindowPlan make_window_plan(const KapSpec& spec, std::size_t channels);

/// Number of output channels, validating the spec against the channel count.
std::size_t kap_output_channels(const KapSpec& spec, std::size_t channels);

/// Kernel average pooling along `channel_axis` with the line arrangement.
Var kap1d(Var z, const KapSpec& spec, std::size_t channel_axis);

/// Kernel average pooling with channels arranged on a row-major sheet.
Var kap2d(Var z, const KapSpec& spec, std::size_t channel_axis);

/// Kernel max pooling over the same windows as KAP (either arrangement).
/// The gradient goes to the lowest-index maximiser of each window.
Var kmp(Var z, const KapSpec& spec, std::size_t channel_axis);

/// Row-window averages of a weight matrix [N_k x D]: for every x,
/// kap(W x) == kap_as_weight_smoothing(W) x.
Tensor kap_as_weight_smoothing(const Tensor& w, const KapSpec& spec);

std::string to_string(const KapSpec& spec);

}  // namespace kap
