#include "kap/kap.hpp"

#include <cmath>
#include <sstream>

#include "kap/error.hpp"

namespace kap {
namespace {

struct AxisWindow {
  std::size_t lo, hi;  // valid input range [lo, hi)
};

std::vector<AxisWindow> axis_windows(std::size_t n, std::size_t k, std::size_t s) {
  const std::size_t pad = (k - 1) / 2;
  if (n + 2 * pad < k) {
    throw DimensionError("kernel pooling: axis of length " + std::to_string(n) + " is shorter than window " +
                         std::to_string(k));
  }
  const std::size_t count = (n + 2 * pad - k) / s + 1;
  std::vector<AxisWindow> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t start = i * s;  // in padded coordinates
    const std::size_t lo = start > pad ? start - pad : 0;
    const std::size_t hi = std::min(n, start + k - pad);
    out.push_back({lo, hi});
  }
  return out;
}

void validate(const KapSpec& spec, std::size_t channels) {
  if (spec.kernel_size < 1) throw ParameterError("kernel pooling: K must be >= 1");
  if (spec.stride < 1 || spec.stride > spec.kernel_size) throw ParameterError("kernel pooling: stride must satisfy 1 <= S <= K");
  if (channels < 1) throw DimensionError("kernel pooling: need at least one channel");
}

struct Split {
  std::size_t outer, channels, inner;
};

Split split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw DimensionError("kernel pooling: channel axis out of range for " + shape_to_string(shape));
  Split s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Var pool_average(Var z, const KapSpec& spec, std::size_t channel_axis) {
  const Tensor& Z = z.value();
  const Split sp = split_at(Z.shape(), channel_axis);
  WindowPlan plan = make_window_plan(spec, sp.channels);
  const std::size_t co = plan.out_channels();
  std::vector<double> out(sp.outer * co * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < co; ++c) {
      const KapWindow& win = plan.windows[c];
      double* dst = out.data() + (o * co + c) * sp.inner;
      for (std::size_t m : win.members) {
        const double* src = Z.data().data() + (o * sp.channels + m) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
      const double inv = 1.0 / win.divisor;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] *= inv;
    }
  Shape shape = Z.shape();
  shape[channel_axis] = co;
  return z.tape->record(Tensor::from_unchecked(std::move(shape), std::move(out)), {z},
                        [plan = std::move(plan), sp](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          auto& dz = *gi[0];
                          const std::size_t co = plan.out_channels();
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t c = 0; c < co; ++c) {
                              const KapWindow& win = plan.windows[c];
                              const double inv = 1.0 / win.divisor;
                              const double* src = g.data() + (o * co + c) * sp.inner;
                              for (std::size_t m : win.members) {
                                double* dst = dz.data() + (o * sp.channels + m) * sp.inner;
                                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * inv;
                              }
                            }
                        });
}

}  // namespace

std::pair<std::size_t, std::size_t> resolve_grid(const KapSpec& spec, std::size_t channels) {
  if (spec.grid_rows == 0 && spec.grid_cols == 0) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(channels))));
    if (side * side != channels) {
      throw DimensionError("kernel pooling: " + std::to_string(channels) +
                           " channels do not form a square sheet; give grid=RxC");
    }
    return {side, side};
  }
  if (spec.grid_rows * spec.grid_cols != channels) {
    throw DimensionError("kernel pooling: grid " + std::to_string(spec.grid_rows) + "x" +
                         std::to_string(spec.grid_cols) + " does not hold " + std::to_string(channels) + " channels");
  }
  return {spec.grid_rows, spec.grid_cols};
}

WindowPlan make_window_plan(const KapSpec& spec, std::size_t channels) {
  validate(spec, channels);
  WindowPlan plan;
  plan.in_channels = channels;
  const double k = static_cast<double>(spec.kernel_size);
  if (spec.arrangement == Arrangement::line) {
    const auto wins = axis_windows(channels, spec.kernel_size, spec.stride);
    plan.out_rows = 1;
    plan.out_cols = wins.size();
    for (const AxisWindow& w : wins) {
      KapWindow kw;
      for (std::size_t c = w.lo; c < w.hi; ++c) kw.members.push_back(c);
      kw.divisor = spec.divide_by_k ? k : static_cast<double>(kw.members.size());
      plan.windows.push_back(std::move(kw));
    }
    return plan;
  }
  const auto [rows, cols] = resolve_grid(spec, channels);
  const auto rw = axis_windows(rows, spec.kernel_size, spec.stride);
  const auto cw = axis_windows(cols, spec.kernel_size, spec.stride);
  plan.out_rows = rw.size();
  plan.out_cols = cw.size();
  for (const AxisWindow& r : rw)
    for (const AxisWindow& c : cw) {
      KapWindow kw;
      for (std::size_t i = r.lo; i < r.hi; ++i)
        for (std::size_t j = c.lo; j < c.hi; ++j) kw.members.push_back(i * cols + j);
      kw.divisor = spec.divide_by_k ? k * k : static_cast<double>(kw.members.size());
      plan.windows.push_back(std::move(kw));
    }
  return plan;
}

std::size_t kap_output_channels(const KapSpec& spec, std::size_t channels) {
  return make_window_plan(spec, channels).out_channels();
}

Var kap1d(Var z, const KapSpec& spec, std::size_t channel_axis) {
  if (spec.arrangement != Arrangement::line) throw ParameterError("kap1d needs the line arrangement");
  return pool_average(z, spec, channel_axis);
}

Var kap2d(Var z, const KapSpec& spec, std::size_t channel_axis) {
  if (spec.arrangement != Arrangement::grid) throw ParameterError("kap2d needs the grid arrangement");
  return pool_average(z, spec, channel_axis);
}

Var kmp(Var z, const KapSpec& spec, std::size_t channel_axis) {
  const Tensor& Z = z.value();
  const Split sp = split_at(Z.shape(), channel_axis);
  const WindowPlan plan = make_window_plan(spec, sp.channels);
  const std::size_t co = plan.out_channels();
  std::vector<double> out(sp.outer * co * sp.inner);
  // Source flat index of every output element, for routing the gradient.
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < co; ++c) {
      const KapWindow& win = plan.windows[c];
      for (std::size_t i = 0; i < sp.inner; ++i) {
        std::size_t best = (o * sp.channels + win.members.front()) * sp.inner + i;
        for (std::size_t m : win.members) {
          const std::size_t idx = (o * sp.channels + m) * sp.inner + i;
          if (Z[idx] > Z[best]) best = idx;
        }
        const std::size_t oi = (o * co + c) * sp.inner + i;
        out[oi] = Z[best];
        argmax[oi] = best;
      }
    }
  Shape shape = Z.shape();
  shape[channel_axis] = co;
  return z.tape->record(Tensor::from_unchecked(std::move(shape), std::move(out)), {z},
                        [argmax = std::move(argmax)](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          auto& dz = *gi[0];
                          for (std::size_t i = 0; i < g.size(); ++i) dz[argmax[i]] += g[i];
                        });
}

Tensor kap_as_weight_smoothing(const Tensor& w, const KapSpec& spec) {
  if (w.rank() != 2) throw DimensionError("kap_as_weight_smoothing: weight must be [N_k x D]");
  const std::size_t rows = w.dim(0), d = w.dim(1);
  const WindowPlan plan = make_window_plan(spec, rows);
  std::vector<double> out(plan.out_channels() * d, 0.0);
  for (std::size_t c = 0; c < plan.out_channels(); ++c) {
    const KapWindow& win = plan.windows[c];
    double* dst = out.data() + c * d;
    for (std::size_t m : win.members)
      for (std::size_t j = 0; j < d; ++j) dst[j] += w[m * d + j];
    for (std::size_t j = 0; j < d; ++j) dst[j] /= win.divisor;
  }
  return Tensor::from_unchecked({plan.out_channels(), d}, std::move(out));
}

std::string to_string(const KapSpec& spec) {
  std::ostringstream os;
  os << "K=" << spec.kernel_size << " S=" << spec.stride;
  if (spec.arrangement == Arrangement::grid && (spec.grid_rows || spec.grid_cols)) {
    os << " grid=" << spec.grid_rows << 'x' << spec.grid_cols;
  }
  if (spec.divide_by_k) os << " divide_by_k=1";
  return os.str();
}

}  // namespace kap
