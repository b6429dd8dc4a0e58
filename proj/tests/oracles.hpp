#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "kap/kap.hpp"
#include "kap/ops.hpp"
#include "support.hpp"

namespace kaptest {

// Direct enumeration of the pooling sums, written from the window formula
// rather than from any plan structure. The channel axis is 1; every axis
// after it is carried along untouched.
//
// line: out_i = sum_{l = S i - p}^{S i - p + K - 1} z_l / div
// grid: out_(r,c) = sum_{l, m} z_(l Nc + m) / div over the K x K block whose
//       corner is (S r - p, S c - p)
// Out-of-range terms are skipped; div is K (K^2 on a grid) or the number of
// terms actually summed.
struct BruteKap {
  std::size_t K, S;
  bool grid;
  std::size_t rows, cols;  // grid only
  bool divide_by_k;
  bool max = false;
};

inline kap::Tensor brute_kap(const kap::Tensor& z, const BruteKap& b) {
  const std::size_t n = z.dim(0), c = z.dim(1);
  std::size_t inner = 1;
  for (std::size_t a = 2; a < z.rank(); ++a) inner *= z.dim(a);
  const long p = static_cast<long>((b.K - 1) / 2);
  const long K = static_cast<long>(b.K), S = static_cast<long>(b.S);

  std::vector<std::vector<long>> members;  // per output channel
  if (!b.grid) {
    const long out = (static_cast<long>(c) + 2 * p - K) / S + 1;
    for (long i = 0; i < out; ++i) {
      std::vector<long> m;
      for (long l = S * i - p; l <= S * i - p + K - 1; ++l)
        if (l >= 0 && l < static_cast<long>(c)) m.push_back(l);
      members.push_back(m);
    }
  } else {
    const long R = static_cast<long>(b.rows), C = static_cast<long>(b.cols);
    const long out_r = (R + 2 * p - K) / S + 1, out_c = (C + 2 * p - K) / S + 1;
    for (long r = 0; r < out_r; ++r)
      for (long q = 0; q < out_c; ++q) {
        std::vector<long> m;
        for (long l = S * r - p; l <= S * r - p + K - 1; ++l)
          for (long mm = S * q - p; mm <= S * q - p + K - 1; ++mm)
            if (l >= 0 && l < R && mm >= 0 && mm < C) m.push_back(l * C + mm);
        members.push_back(m);
      }
  }

  kap::Shape shape = z.shape();
  shape[1] = members.size();
  kap::Tensor out(shape);
  const double full = b.grid ? static_cast<double>(b.K * b.K) : static_cast<double>(b.K);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < members.size(); ++o)
      for (std::size_t e = 0; e < inner; ++e) {
        double acc = b.max ? -std::numeric_limits<double>::infinity() : 0.0;
        for (long l : members[o]) {
          const double v = z[(s * c + static_cast<std::size_t>(l)) * inner + e];
          acc = b.max ? std::max(acc, v) : acc + v;
        }
        if (!b.max) acc /= b.divide_by_k ? full : static_cast<double>(members[o].size());
        out[(s * members.size() + o) * inner + e] = acc;
      }
  return out;
}

inline kap::KapSpec to_spec(const BruteKap& b) {
  kap::KapSpec s;
  s.kernel_size = b.K;
  s.stride = b.S;
  s.arrangement = b.grid ? kap::Arrangement::grid : kap::Arrangement::line;
  s.grid_rows = b.grid ? b.rows : 0;
  s.grid_cols = b.grid ? b.cols : 0;
  s.divide_by_k = b.divide_by_k;
  return s;
}

struct OracleSweep {
  std::size_t cases = 0;
  double max_error = 0.0;
};

// Every line length N_k in [1, 12], every 3x3 and 4x4 grid, K in {1,3,5},
// S in {1,2,3} with S <= K, both divisors. Inputs carry spatial axes too.
inline OracleSweep kap_oracle_sweep(std::uint64_t seed) {
  OracleSweep sweep;
  kap::Rng rng(seed);
  for (std::size_t K : {1, 3, 5})
    for (std::size_t S : {1, 2, 3}) {
      if (S > K) continue;
      for (bool div : {false, true}) {
        for (std::size_t n = 1; n <= 12; ++n) {
          const BruteKap b{K, S, false, 0, 0, div};
          const kap::Tensor z = random_tensor({2, n, 2, 3}, rng);
          kap::Tape tape;
          const kap::Tensor got = kap::kap1d(tape.constant(z), to_spec(b), 1).value();
          const kap::Tensor want = brute_kap(z, b);
          ++sweep.cases;
          if (got.shape() != want.shape()) {
            sweep.max_error = std::numeric_limits<double>::infinity();
            continue;
          }
          for (std::size_t i = 0; i < got.size(); ++i)
            sweep.max_error = std::max(sweep.max_error, std::abs(got[i] - want[i]));
        }
        for (std::size_t g : {3, 4}) {
          const BruteKap b{K, S, true, g, g, div};
          const kap::Tensor z = random_tensor({2, g * g, 2, 2}, rng);
          kap::Tape tape;
          const kap::Tensor got = kap::kap2d(tape.constant(z), to_spec(b), 1).value();
          const kap::Tensor want = brute_kap(z, b);
          ++sweep.cases;
          if (got.shape() != want.shape()) {
            sweep.max_error = std::numeric_limits<double>::infinity();
            continue;
          }
          for (std::size_t i = 0; i < got.size(); ++i)
            sweep.max_error = std::max(sweep.max_error, std::abs(got[i] - want[i]));
        }
      }
    }
  return sweep;
}

struct LayerGradResult {
  std::string layer;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central-difference checks of every differentiable layer type for one seed.
inline std::vector<LayerGradResult> layer_gradient_checks(std::uint64_t seed) {
  using kap::Tape;
  using kap::Var;
  std::vector<LayerGradResult> out;
  kap::Rng rng(seed);
  auto record = [&](const std::string& name, const GradCheck& g) { out.push_back({name, g.max_rel_error, g.checked}); };

  record("conv2d", check_gradients(
                       [](Tape&, const std::vector<Var>& v) { return kap::conv2d(v[0], v[1], v[2], 1, 1); },
                       {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng, 0.5),
                        random_tensor({3}, rng)},
                       seed));
  record("conv2d_stride2", check_gradients(
                               [](Tape&, const std::vector<Var>& v) { return kap::conv2d(v[0], v[1], v[2], 2, 0); },
                               {random_tensor({1, 2, 5, 5}, rng), random_tensor({2, 2, 3, 3}, rng, 0.5),
                                random_tensor({2}, rng)},
                               seed + 1));
  record("dense", check_gradients([](Tape&, const std::vector<Var>& v) { return kap::linear(v[0], v[1], v[2]); },
                                  {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)},
                                  seed));
  record("relu", check_gradients([](Tape&, const std::vector<Var>& v) { return kap::relu(v[0]); },
                                 {spaced_tensor({2, 3, 4}, rng)}, seed));

  kap::KapSpec line;
  line.kernel_size = 3;
  line.stride = 1;
  kap::KapSpec line_s2 = line;
  line_s2.kernel_size = 5;
  line_s2.stride = 2;
  kap::KapSpec grid;
  grid.kernel_size = 3;
  grid.stride = 1;
  grid.arrangement = kap::Arrangement::grid;
  grid.grid_rows = 3;
  grid.grid_cols = 3;
  kap::KapSpec grid_div = grid;
  grid_div.divide_by_k = true;
  grid_div.grid_rows = 2;
  grid_div.grid_cols = 4;

  record("kap1d", check_gradients([line](Tape&, const std::vector<Var>& v) { return kap::kap1d(v[0], line, 1); },
                                  {random_tensor({2, 7, 2, 2}, rng)}, seed));
  record("kap1d_s2",
         check_gradients([line_s2](Tape&, const std::vector<Var>& v) { return kap::kap1d(v[0], line_s2, 1); },
                         {random_tensor({2, 9}, rng)}, seed));
  record("kap2d", check_gradients([grid](Tape&, const std::vector<Var>& v) { return kap::kap2d(v[0], grid, 1); },
                                  {random_tensor({2, 9, 2, 2}, rng)}, seed));
  record("kap2d_div",
         check_gradients([grid_div](Tape&, const std::vector<Var>& v) { return kap::kap2d(v[0], grid_div, 1); },
                         {random_tensor({2, 8, 3}, rng)}, seed));
  record("kmp", check_gradients([line](Tape&, const std::vector<Var>& v) { return kap::kmp(v[0], line, 1); },
                                {spaced_tensor({2, 7, 2, 2}, rng)}, seed));
  record("kmp_grid", check_gradients([grid](Tape&, const std::vector<Var>& v) { return kap::kmp(v[0], grid, 1); },
                                     {spaced_tensor({2, 9, 2, 2}, rng)}, seed));
  record("spatial_avg_pool",
         check_gradients([](Tape&, const std::vector<Var>& v) { return kap::spatial_avg_pool(v[0], 2, 2); },
                         {random_tensor({2, 3, 4, 6}, rng)}, seed));
  record("spatial_avg_pool_global",
         check_gradients([](Tape&, const std::vector<Var>& v) { return kap::spatial_avg_pool(v[0], 0, 0); },
                         {random_tensor({2, 3, 4, 4}, rng)}, seed));
  record("cross_entropy", check_gradients(
                              [](Tape&, const std::vector<Var>& v) {
                                static const int labels[] = {0, 2, 1};
                                return kap::cross_entropy(v[0], labels);
                              },
                              {random_tensor({3, 4}, rng)}, seed));
  return out;
}

}  // namespace kaptest
