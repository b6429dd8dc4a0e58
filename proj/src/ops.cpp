#include "kap/ops.hpp"

#include <algorithm>
#include <cmath>

#include "kap/error.hpp"

namespace kap {
namespace {

void same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("op arguments live on different tapes");
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

struct ConvDims {
  std::size_t batch, c_in, h, w, c_out, k, h_out, w_out;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  if (x.rank() != 3 && x.rank() != 4) throw DimensionError("conv2d: input must be [C,H,W] or [N,C,H,W]");
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) throw DimensionError("conv2d: weight must be [C_out,C_in,k,k]");
  if (stride == 0) throw ParameterError("conv2d: stride must be positive");
  const std::size_t off = x.rank() == 4 ? 1 : 0;
  ConvDims d{};
  d.batch = off ? x.dim(0) : 1;
  d.c_in = x.dim(off);
  d.h = x.dim(off + 1);
  d.w = x.dim(off + 2);
  d.c_out = w.dim(0);
  d.k = w.dim(2);
  if (w.dim(1) != d.c_in) throw DimensionError("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " + std::to_string(d.c_in));
  if (b.rank() != 1 || b.dim(0) != d.c_out) throw DimensionError("conv2d: bias must be [C_out]");
  if (d.k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd");
  const std::size_t ph = d.h + 2 * pad, pw = d.w + 2 * pad;
  if (ph < d.k || pw < d.k || (ph - d.k) % stride != 0 || (pw - d.k) % stride != 0) {
    throw DimensionError("conv2d: output size is not integral for input " + shape_to_string(x.shape()));
  }
  d.h_out = (ph - d.k) / stride + 1;
  d.w_out = (pw - d.k) / stride + 1;
  return d;
}

// Range of output columns ox for which ox*stride + kx - pad lies in [0, n).
std::pair<std::size_t, std::size_t> valid_range(std::size_t n_out, std::size_t n_in, std::size_t stride,
                                                std::size_t kx, std::size_t pad) {
  // ox*stride >= pad - kx
  std::size_t lo = 0;
  if (pad > kx) lo = (pad - kx + stride - 1) / stride;
  // ox*stride + kx - pad <= n_in - 1
  std::size_t hi = 0;
  if (n_in + pad > kx) hi = std::min(n_out, (n_in - 1 + pad - kx) / stride + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_to_string(A.shape()) + " by " + shape_to_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  Tape* tape = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(Tensor::from_unchecked({m, n}, std::move(out)), {a, b},
                      [tape, ia, ib, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                        const Tensor& A = tape->value(ia);
                        const Tensor& B = tape->value(ib);
                        if (gi[0]) {
                          auto& ga = *gi[0];
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t p = 0; p < k; ++p) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                              ga[i * k + p] += s;
                            }
                        }
                        if (gi[1]) {
                          auto& gb = *gi[1];
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t p = 0; p < k; ++p) {
                              const double av = A[i * k + p];
                              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                      });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  same_shape(A, B, "add");
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return a.tape->record(Tensor::from_unchecked(A.shape(), std::move(out)), {a, b},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          for (auto* buf : gi) {
                            if (!buf) continue;
                            for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
                          }
                        });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  same_shape(A, B, "mul");
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  Tape* tape = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(Tensor::from_unchecked(A.shape(), std::move(out)), {a, b},
                      [tape, ia, ib](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                        const Tensor& A = tape->value(ia);
                        const Tensor& B = tape->value(ib);
                        if (gi[0])
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * B[i];
                        if (gi[1])
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * A[i];
                      });
}

Var mul_scalar(Var x, double factor) {
  const Tensor& X = x.value();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * factor;
  return x.tape->record(Tensor::from_unchecked(X.shape(), std::move(out)), {x},
                        [factor](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor;
                        });
}

Var relu(Var x) {
  const Tensor& X = x.value();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] > 0.0 ? X[i] : 0.0;
  Tape* tape = x.tape;
  const std::size_t ix = x.id;
  return tape->record(Tensor::from_unchecked(X.shape(), std::move(out)), {x},
                      [tape, ix](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                        const Tensor& X = tape->value(ix);
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if (X[i] > 0.0) (*gi[0])[i] += g[i];
                      });
}

Var add_bias(Var x, Var bias, std::size_t axis) {
  same_tape(x, bias);
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  if (axis >= X.rank() || B.rank() != 1 || B.dim(0) != X.dim(axis)) {
    throw DimensionError("add_bias: bias " + shape_to_string(B.shape()) + " does not match axis " +
                         std::to_string(axis) + " of " + shape_to_string(X.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= X.dim(i);
  for (std::size_t i = axis + 1; i < X.rank(); ++i) inner *= X.dim(i);
  const std::size_t channels = X.dim(axis);
  std::vector<double> out(X.values());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < channels; ++c) {
      double* row = out.data() + (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] += B[c];
    }
  return x.tape->record(Tensor::from_unchecked(X.shape(), std::move(out)), {x, bias},
                        [outer, channels, inner](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          if (gi[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                          if (gi[1]) {
                            auto& gb = *gi[1];
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t c = 0; c < channels; ++c) {
                                const double* row = g.data() + (o * channels + c) * inner;
                                double s = 0.0;
                                for (std::size_t i = 0; i < inner; ++i) s += row[i];
                                gb[c] += s;
                              }
                          }
                        });
}

Var sum(Var x) {
  const Tensor& X = x.value();
  double s = 0.0;
  for (double v : X.data()) s += v;
  return x.tape->record(Tensor::from_unchecked({}, {s}), {x},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          for (double& v : *gi[0]) v += g[0];
                        });
}

Var mean(Var x) {
  const Tensor& X = x.value();
  const double n = static_cast<double>(X.size());
  double s = 0.0;
  for (double v : X.data()) s += v;
  return x.tape->record(Tensor::from_unchecked({}, {s / n}), {x},
                        [n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          for (double& v : *gi[0]) v += g[0] / n;
                        });
}

Var reshape(Var x, Shape shape) {
  const Tensor& X = x.value();
  if (shape_size(shape) != X.size()) {
    throw DimensionError("reshape: " + shape_to_string(X.shape()) + " to " + shape_to_string(shape));
  }
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("reshape: zero dimension");
  return x.tape->record(Tensor::from_unchecked(std::move(shape), X.values()), {x},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                        });
}

Var flatten(Var x, std::size_t start_axis) {
  const Shape& s = x.shape();
  if (start_axis >= s.size()) {
    if (start_axis == s.size() && start_axis > 0) return reshape(x, s);
    throw DimensionError("flatten: start axis out of range for " + shape_to_string(s));
  }
  Shape out(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(start_axis));
  std::size_t rest = 1;
  for (std::size_t i = start_axis; i < s.size(); ++i) rest *= s[i];
  out.push_back(rest);
  return reshape(x, std::move(out));
}

Var gaussian_noise_add(Var x, double sigma, Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("gaussian_noise_add: sigma must be >= 0");
  const Tensor& X = x.value();
  std::vector<double> out(X.values());
  if (sigma > 0.0)
    for (double& v : out) v += sigma * rng.normal();
  return x.tape->record(Tensor::from_unchecked(X.shape(), std::move(out)), {x},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                        });
}

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  same_tape(x, w);
  same_tape(x, b);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  const ConvDims d = conv_dims(X, W, B, stride, pad);

  const std::size_t in_plane = d.h * d.w, out_plane = d.h_out * d.w_out;
  std::vector<double> out(d.batch * d.c_out * out_plane);
  for (std::size_t n = 0; n < d.batch; ++n) {
    const double* xs = X.data().data() + n * d.c_in * in_plane;
    for (std::size_t co = 0; co < d.c_out; ++co) {
      double* os = out.data() + (n * d.c_out + co) * out_plane;
      std::fill(os, os + out_plane, B[co]);
      for (std::size_t ci = 0; ci < d.c_in; ++ci) {
        const double* xp = xs + ci * in_plane;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          const auto [oy0, oy1] = valid_range(d.h_out, d.h, stride, ky, pad);
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const double wv = W[((co * d.c_in + ci) * d.k + ky) * d.k + kx];
            const auto [ox0, ox1] = valid_range(d.w_out, d.w, stride, kx, pad);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const double* xr = xp + (oy * stride + ky - pad) * d.w;
              double* orow = os + oy * d.w_out;
              if (stride == 1) {
                for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xr[ox + kx - pad];
              } else {
                for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xr[ox * stride + kx - pad];
              }
            }
          }
        }
      }
    }
  }

  Shape out_shape = X.rank() == 4 ? Shape{d.batch, d.c_out, d.h_out, d.w_out} : Shape{d.c_out, d.h_out, d.w_out};
  Tape* tape = x.tape;
  const std::size_t ix = x.id, iw = w.id;
  return tape->record(
      Tensor::from_unchecked(std::move(out_shape), std::move(out)), {x, w, b},
      [tape, ix, iw, d, stride, pad](std::span<const double> g, std::span<std::vector<double>* const> gi) {
        const Tensor& X = tape->value(ix);
        const Tensor& W = tape->value(iw);
        const std::size_t in_plane = d.h * d.w, out_plane = d.h_out * d.w_out;
        for (std::size_t n = 0; n < d.batch; ++n) {
          const double* xs = X.data().data() + n * d.c_in * in_plane;
          for (std::size_t co = 0; co < d.c_out; ++co) {
            const double* gs = g.data() + (n * d.c_out + co) * out_plane;
            if (gi[2]) {
              double s = 0.0;
              for (std::size_t i = 0; i < out_plane; ++i) s += gs[i];
              (*gi[2])[co] += s;
            }
            for (std::size_t ci = 0; ci < d.c_in; ++ci) {
              const double* xp = xs + ci * in_plane;
              double* dxp = gi[0] ? gi[0]->data() + (n * d.c_in + ci) * in_plane : nullptr;
              for (std::size_t ky = 0; ky < d.k; ++ky) {
                const auto [oy0, oy1] = valid_range(d.h_out, d.h, stride, ky, pad);
                for (std::size_t kx = 0; kx < d.k; ++kx) {
                  const std::size_t widx = ((co * d.c_in + ci) * d.k + ky) * d.k + kx;
                  const double wv = W[widx];
                  const auto [ox0, ox1] = valid_range(d.w_out, d.w, stride, kx, pad);
                  double dw = 0.0;
                  for (std::size_t oy = oy0; oy < oy1; ++oy) {
                    const std::size_t row = (oy * stride + ky - pad) * d.w;
                    const double* grow = gs + oy * d.w_out;
                    if (stride == 1) {
                      const double* xr = xp + row;
                      for (std::size_t ox = ox0; ox < ox1; ++ox) dw += grow[ox] * xr[ox + kx - pad];
                      if (dxp) {
                        double* dr = dxp + row;
                        for (std::size_t ox = ox0; ox < ox1; ++ox) dr[ox + kx - pad] += wv * grow[ox];
                      }
                    } else {
                      for (std::size_t ox = ox0; ox < ox1; ++ox) {
                        const std::size_t col = ox * stride + kx - pad;
                        dw += grow[ox] * xp[row + col];
                        if (dxp) dxp[row + col] += wv * grow[ox];
                      }
                    }
                  }
                  if (gi[1]) (*gi[1])[widx] += dw;
                }
              }
            }
          }
        }
      });
}

Var linear(Var x, Var w, Var b) {
  same_tape(x, w);
  same_tape(x, b);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(1)) {
    throw DimensionError("linear: input " + shape_to_string(X.shape()) + " incompatible with weight " +
                         shape_to_string(W.shape()));
  }
  if (B.rank() != 1 || B.dim(0) != W.dim(0)) throw DimensionError("linear: bias must be [out]");
  const std::size_t n = X.dim(0), in = X.dim(1), o = W.dim(0);
  std::vector<double> out(n * o);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t u = 0; u < o; ++u) {
      double s = B[u];
      for (std::size_t j = 0; j < in; ++j) s += W[u * in + j] * X[r * in + j];
      out[r * o + u] = s;
    }
  Tape* tape = x.tape;
  const std::size_t ix = x.id, iw = w.id;
  return tape->record(Tensor::from_unchecked({n, o}, std::move(out)), {x, w, b},
                      [tape, ix, iw, n, in, o](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                        const Tensor& X = tape->value(ix);
                        const Tensor& W = tape->value(iw);
                        for (std::size_t r = 0; r < n; ++r)
                          for (std::size_t u = 0; u < o; ++u) {
                            const double gv = g[r * o + u];
                            if (gi[0]) {
                              double* dx = gi[0]->data() + r * in;
                              for (std::size_t j = 0; j < in; ++j) dx[j] += gv * W[u * in + j];
                            }
                            if (gi[1]) {
                              double* dw = gi[1]->data() + u * in;
                              for (std::size_t j = 0; j < in; ++j) dw[j] += gv * X[r * in + j];
                            }
                            if (gi[2]) (*gi[2])[u] += gv;
                          }
                      });
}

Var spatial_avg_pool(Var x, std::size_t window, std::size_t stride) {
  const Tensor& X = x.value();
  if (X.rank() < 2) throw DimensionError("spatial_avg_pool: needs at least two axes");
  const std::size_t h = X.dim(X.rank() - 2), w = X.dim(X.rank() - 1);
  std::size_t wh = window, ww = window, sh = stride, sw = stride;
  if (window == 0) {
    wh = sh = h;
    ww = sw = w;
  }
  if (sh == 0 || sw == 0) throw ParameterError("spatial_avg_pool: stride must be positive");
  if (wh > h || ww > w || (h - wh) % sh != 0 || (w - ww) % sw != 0) {
    throw DimensionError("spatial_avg_pool: window does not tile input " + shape_to_string(X.shape()));
  }
  const std::size_t ho = (h - wh) / sh + 1, wo = (w - ww) / sw + 1;
  const std::size_t planes = X.size() / (h * w);
  const double inv = 1.0 / static_cast<double>(wh * ww);
  std::vector<double> out(planes * ho * wo, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (std::size_t ky = 0; ky < wh; ++ky)
          for (std::size_t kx = 0; kx < ww; ++kx) s += X[(p * h + oy * sh + ky) * w + ox * sw + kx];
        out[(p * ho + oy) * wo + ox] = s * inv;
      }
  Shape shape = X.shape();
  shape[shape.size() - 2] = ho;
  shape[shape.size() - 1] = wo;
  return x.tape->record(Tensor::from_unchecked(std::move(shape), std::move(out)), {x},
                        [=](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                          auto& dx = *gi[0];
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t oy = 0; oy < ho; ++oy)
                              for (std::size_t ox = 0; ox < wo; ++ox) {
                                const double gv = g[(p * ho + oy) * wo + ox] * inv;
                                for (std::size_t ky = 0; ky < wh; ++ky)
                                  for (std::size_t kx = 0; kx < ww; ++kx) dx[(p * h + oy * sh + ky) * w + ox * sw + kx] += gv;
                              }
                        });
}

std::vector<double> cross_entropy_values(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw DimensionError("cross_entropy: label out of range");
    const double* z = logits.data().data() + r * c;
    const double mx = *std::max_element(z, z + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
    out[r] = std::log(s) + mx - z[y];
  }
  return out;
}

Var cross_entropy(Var logits, std::span<const int> labels, Reduction reduction) {
  const Tensor& Z = logits.value();
  const std::vector<double> per_row = cross_entropy_values(Z, labels);
  const std::size_t n = Z.dim(0), c = Z.dim(1);
  double total = 0.0;
  for (double v : per_row) total += v;
  const double scale = reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
  std::vector<int> ys(labels.begin(), labels.end());
  Tape* tape = logits.tape;
  const std::size_t iz = logits.id;
  return tape->record(Tensor::from_unchecked({}, {total * scale}), {logits},
                      [tape, iz, ys = std::move(ys), n, c, scale](std::span<const double> g,
                                                                  std::span<std::vector<double>* const> gi) {
                        const Tensor& Z = tape->value(iz);
                        auto& dz = *gi[0];
                        for (std::size_t r = 0; r < n; ++r) {
                          const double* z = Z.data().data() + r * c;
                          const double mx = *std::max_element(z, z + c);
                          double s = 0.0;
                          for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
                          for (std::size_t j = 0; j < c; ++j) {
                            double p = std::exp(z[j] - mx) / s;
                            if (static_cast<int>(j) == ys[r]) p -= 1.0;
                            dz[r * c + j] += g[0] * scale * p;
                          }
                        }
                      });
}

}  // namespace kap
