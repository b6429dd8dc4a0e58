#include "kap/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "kap/classifier.hpp"
#include "kap/error.hpp"
#include "kap/ops.hpp"
#include "kap/rng.hpp"
#include "kap/stats.hpp"

namespace kap {
namespace {

std::vector<double> row_norms(const Tensor& t) {
  const std::size_t n = t.dim(0), per = t.size() / n;
  std::vector<double> out(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += t[s * per + i] * t[s * per + i];
    out[s] = std::sqrt(acc);
  }
  return out;
}

std::vector<double> row_distances(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), per = a.size() / n;
  std::vector<double> out(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = a[s * per + i] - b[s * per + i];
      acc += d * d;
    }
    out[s] = std::sqrt(acc);
  }
  return out;
}

// Input followed by every layer output, eval mode.
std::vector<Tensor> layer_outputs(const Network& net, const Tensor& x) {
  Tape tape;
  const Var in = tape.constant(x);
  const ForwardResult r = net.forward(tape, in);
  std::vector<Tensor> out{x};
  for (Var v : r.activations) out.push_back(tape.value(v));
  return out;
}

}  // namespace

TopographyReport kernel_topography(const Tensor& kernels, std::size_t rows, std::size_t cols) {
  if (kernels.rank() < 2) throw DimensionError("kernel_topography: expected [N, ...] kernels");
  const std::size_t n = kernels.dim(0), d = kernels.size() / n;
  if (rows * cols != n) {
    throw DimensionError("kernel_topography: sheet " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " does not hold " + std::to_string(n) + " kernels");
  }
  TopographyReport rep;
  rep.rows = rows;
  rep.cols = cols;
  for (std::size_t c = 0; c < n; ++c) rep.coords.emplace_back(c / cols, c % cols);
  const std::vector<double> norms = row_norms(kernels);
  std::vector<double> dist, dis;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += kernels[a * d + j] * kernels[b * d + j];
      const double denom = norms[a] * norms[b];
      double diss = denom > 0.0 ? 1.0 - dot / denom : 1.0;
      diss = std::clamp(diss, 0.0, 2.0);
      if (diss < 1e-12) diss = 0.0;
      const double dr = static_cast<double>(rep.coords[a].first) - static_cast<double>(rep.coords[b].first);
      const double dc = static_cast<double>(rep.coords[a].second) - static_cast<double>(rep.coords[b].second);
      rep.pairwise.push_back({a, b, std::sqrt(dr * dr + dc * dc), diss});
      dist.push_back(rep.pairwise.back().grid_distance);
      dis.push_back(diss);
    }
  rep.rank_correlation = spearman(dist, dis);
  return rep;
}

TopographyReport topography_report(const Network& net, std::size_t layer_index) {
  const auto& layers = net.spec().layers;
  const auto w = net.weight_of_layer(layer_index);
  if (!w) throw UsageError("layer " + std::to_string(layer_index) + " has no kernels");
  const Tensor& kernels = net.parameters()[*w].value;
  for (std::size_t j = layer_index + 1; j < layers.size(); ++j) {
    const KapSpec* spec = nullptr;
    if (const auto* k2 = std::get_if<Kap2dLayer>(&layers[j])) spec = &k2->kap;
    if (const auto* km = std::get_if<KmpLayer>(&layers[j]); km && km->kap.arrangement == Arrangement::grid) {
      spec = &km->kap;
    }
    if (spec) {
      const auto [r, c] = resolve_grid(*spec, kernels.dim(0));
      return kernel_topography(kernels, r, c);
    }
    if (net.weight_of_layer(j)) break;
  }
  throw UsageError("layer " + std::to_string(layer_index) + " is not followed by a grid KAP");
}

double kernel_smoothness(const Tensor& weights) {
  if (weights.rank() != 4 && weights.rank() != 2) throw DimensionError("kernel_smoothness: expected [O,I,k,k] or [O,D]");
  const std::size_t o = weights.dim(0), per = weights.size() / o;
  double total = 0.0;
  for (std::size_t k = 0; k < o; ++k) {
    const double* w = weights.data().data() + k * per;
    double acc = 0.0;
    std::size_t pairs = 0;
    if (weights.rank() == 2) {
      for (std::size_t j = 0; j + 1 < per; ++j, ++pairs) acc += (w[j + 1] - w[j]) * (w[j + 1] - w[j]);
    } else {
      const std::size_t ch = weights.dim(1), h = weights.dim(2), wd = weights.dim(3);
      for (std::size_t c = 0; c < ch; ++c) {
        const double* s = w + c * h * wd;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < wd; ++x) {
            if (x + 1 < wd) {
              acc += (s[y * wd + x + 1] - s[y * wd + x]) * (s[y * wd + x + 1] - s[y * wd + x]);
              ++pairs;
            }
            if (y + 1 < h) {
              acc += (s[(y + 1) * wd + x] - s[y * wd + x]) * (s[(y + 1) * wd + x] - s[y * wd + x]);
              ++pairs;
            }
          }
      }
    }
    total += pairs ? acc / static_cast<double>(pairs) : 0.0;
  }
  return total / static_cast<double>(o);
}

double kernel_smoothness(const Network& net, std::size_t layer_index) {
  const auto w = net.weight_of_layer(layer_index);
  if (!w) throw UsageError("layer " + std::to_string(layer_index) + " has no kernels");
  return kernel_smoothness(net.parameters()[*w].value);
}

Tensor smooth_kernels(const Tensor& weights, const KapSpec& spec) {
  const std::size_t o = weights.dim(0);
  const Tensor flat = weights.reshaped({o, weights.size() / o});
  const Tensor smoothed = kap_as_weight_smoothing(flat, spec);
  Shape shape = weights.shape();
  shape[0] = smoothed.dim(0);
  return smoothed.reshaped(shape);
}

GradientProfile gradient_difference_profile(std::size_t n_k, std::size_t kernel_size, std::uint64_t seed,
                                            std::size_t input_dim, bool constant_w2) {
  if (n_k < 1 || kernel_size < 1 || input_dim < 1) throw ParameterError("gradient profile needs positive sizes");
  if (kernel_size % 2 == 0) throw ParameterError("gradient profile needs an odd K");
  Rng rng(seed);
  std::vector<double> w1(n_k * input_dim), w2(n_k), xv(input_dim);
  for (double& v : w1) v = rng.normal();
  for (double& v : w2) v = constant_w2 ? 1.0 : rng.normal();
  for (double& v : xv) v = rng.normal();

  KapSpec spec;
  spec.kernel_size = kernel_size;
  spec.stride = 1;
  spec.divide_by_k = true;

  Tape tape;
  const Var W1 = tape.variable(Tensor({n_k, input_dim}, w1));
  const Var x = tape.constant(Tensor({1, input_dim}, xv));
  const Var b = tape.constant(Tensor(Shape{n_k}, 0.0));
  const Var zbar = kap1d(linear(x, W1, b), spec, 1);
  const Var y = sum(mul(zbar, tape.constant(Tensor({1, n_k}, w2))));
  tape.backward(y);
  const std::vector<double>& auto_grad = tape.grad(W1);

  // Output j pools inputs [j - h, j - h + K - 1], so input i feeds outputs
  // j in [i - K + 1 + h, i + h].
  const long K = static_cast<long>(kernel_size), N = static_cast<long>(n_k);
  const long h = (K - 1) / 2;
  auto lo = [&](long i) { return i - K + 1 + h; };
  auto hi = [&](long i) { return i + h; };
  auto window_sum = [&](long i) {
    double s = 0.0;
    for (long j = lo(i); j <= hi(i); ++j)
      if (j >= 0 && j < N) s += w2[static_cast<std::size_t>(j)];
    return s;
  };
  const double invk = 1.0 / static_cast<double>(K);

  GradientProfile prof;
  for (long i = 0; i < N; ++i) {
    const double ws = window_sum(i);
    for (std::size_t k = 0; k < input_dim; ++k) {
      const double closed = invk * ws * xv[k];
      prof.max_autodiff_error =
          std::max(prof.max_autodiff_error, std::abs(closed - auto_grad[static_cast<std::size_t>(i) * input_dim + k]));
    }
  }
  for (long d = 0; d <= K; ++d) {
    GradientDifference row;
    row.d = static_cast<std::size_t>(d);
    double acc = 0.0;
    for (long i = 0; i + d < N; ++i) {
      const long j = i + d;
      const double closed = invk * (window_sum(i) - window_sum(j));
      double diff_norm = 0.0;
      for (std::size_t k = 0; k < input_dim; ++k) {
        const double ad = auto_grad[static_cast<std::size_t>(i) * input_dim + k] -
                          auto_grad[static_cast<std::size_t>(j) * input_dim + k];
        prof.max_autodiff_error = std::max(prof.max_autodiff_error, std::abs(ad - closed * xv[k]));
        diff_norm += closed * xv[k] * closed * xv[k];
      }
      if (lo(i) >= 0 && hi(j) < N) {
        acc += std::sqrt(diff_norm);
        ++row.pairs;
      }
    }
    row.mean_norm = row.pairs ? acc / static_cast<double>(row.pairs) : 0.0;
    prof.rows.push_back(row);
  }
  return prof;
}

VarianceCheck variance_reduction_check(std::size_t kernel_size, double sigma, std::size_t n_samples,
                                       std::uint64_t seed) {
  if (kernel_size < 1 || n_samples < 2) throw ParameterError("variance check needs K >= 1 and two samples");
  if (sigma < 0.0) throw ParameterError("sigma must be >= 0");
  Rng rng(seed);
  std::vector<double> z(n_samples * kernel_size);
  for (double& v : z) v = sigma * rng.normal();
  KapSpec spec;
  spec.kernel_size = kernel_size;
  spec.stride = 1;
  Tape tape;
  const Tensor& out = tape.value(kap1d(tape.constant(Tensor({n_samples, kernel_size}, std::move(z))), spec, 1));
  const std::size_t pick = (kernel_size - 1) / 2;
  std::vector<double> vals(n_samples);
  const std::size_t width = out.dim(1);
  for (std::size_t s = 0; s < n_samples; ++s) vals[s] = out[s * width + pick];
  const double m = mean_of(vals);
  double acc = 0.0;
  for (double v : vals) acc += (v - m) * (v - m);
  return {acc / static_cast<double>(n_samples - 1), sigma * sigma / static_cast<double>(kernel_size)};
}

double PerturbationProfile::final_ratio() const {
  if (layers.empty()) return 0.0;
  const LayerPerturbation& l = layers.back();
  if (l.gaussian_mean == 0.0) return l.adversarial_mean > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return l.adversarial_mean / l.gaussian_mean;
}

PerturbationProfile perturbation_profile(const Network& net, const Tensor& x, std::span<const int> labels,
                                         const AttackConfig& attack, double sigma, std::size_t n_draws,
                                         std::uint64_t seed) {
  if (sigma < 0.0) throw ParameterError("sigma must be >= 0");
  const std::vector<Tensor> clean = layer_outputs(net, x);
  std::vector<std::vector<double>> base;
  for (const Tensor& t : clean) base.push_back(row_norms(t));
  const std::size_t layers = clean.size();
  std::vector<std::vector<double>> gauss(layers), adv(layers);

  auto record = [&](const Tensor& xp, std::vector<std::vector<double>>& into) {
    const std::vector<Tensor> out = layer_outputs(net, xp);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::vector<double> d = row_distances(out[l], clean[l]);
      for (std::size_t s = 0; s < d.size(); ++s) into[l].push_back(base[l][s] > 0.0 ? d[s] / base[l][s] : d[s]);
    }
  };

  const Rng root(seed);
  const NetworkClassifier clf(net);
  for (std::size_t d = 0; d < n_draws; ++d) {
    Rng rng = root.derive("gaussian").derive(d);
    std::vector<double> xs(x.data().begin(), x.data().end());
    for (double& v : xs) v += sigma * rng.normal();
    record(Tensor::from_unchecked(x.shape(), std::move(xs)), gauss);

    AttackConfig a = attack;
    a.seed = mix_seed(attack.seed, d);
    a.random_start = true;
    record(pgd(clf, x, labels, a), adv);
  }

  PerturbationProfile prof;
  const auto& specs = net.spec().layers;
  for (std::size_t l = 0; l < layers; ++l) {
    LayerPerturbation lp;
    lp.layer = l == 0 ? "input" : std::to_string(l - 1) + ":" + layer_kind(specs[l - 1]);
    lp.gaussian_mean = mean_of(gauss[l]);
    lp.gaussian_std = stddev_of(gauss[l]);
    lp.adversarial_mean = mean_of(adv[l]);
    lp.adversarial_std = stddev_of(adv[l]);
    prof.layers.push_back(lp);
  }
  return prof;
}

void write_kernel_sheet(const Tensor& kernels, std::size_t rows, std::size_t cols, const std::string& path) {
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) throw DimensionError("kernel sheet needs [O,I,k,k]");
  const std::size_t o = kernels.dim(0), ch = kernels.dim(1), k = kernels.dim(2);
  if (rows * cols != o) throw DimensionError("kernel sheet grid does not hold every kernel");
  const std::size_t tile = k + 1;
  const std::size_t width = cols * tile + 1, height = rows * tile + 1;
  std::vector<unsigned char> img(width * height, 0);
  for (std::size_t n = 0; n < o; ++n) {
    std::vector<double> mean(k * k, 0.0);
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < k * k; ++i) mean[i] += kernels[(n * ch + c) * k * k + i] / static_cast<double>(ch);
    const auto [mn, mx] = std::minmax_element(mean.begin(), mean.end());
    const double lo = *mn, span = *mx - *mn;
    const std::size_t r0 = (n / cols) * tile + 1, c0 = (n % cols) * tile + 1;
    for (std::size_t y = 0; y < k; ++y)
      for (std::size_t x = 0; x < k; ++x) {
        const double v = span > 0.0 ? (mean[y * k + x] - lo) / span * 255.0 : 128.0;
        img[(r0 + y) * width + c0 + x] = static_cast<unsigned char>(std::lround(v));
      }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

}  // namespace kap
