#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "kap/ops.hpp"
#include "kap/rng.hpp"
#include "kap/tape.hpp"
#include "kap/tensor.hpp"

namespace kaptest {

inline kap::Tensor random_tensor(const kap::Shape& shape, kap::Rng& rng, double scale = 1.0) {
  kap::Tensor t(shape);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Values spaced at least `gap` apart in random order, so max and relu kinks
// stay out of reach of a finite-difference step.
inline kap::Tensor spaced_tensor(const kap::Shape& shape, kap::Rng& rng, double gap = 0.05) {
  kap::Tensor t(shape);
  std::vector<double> vals(t.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = (static_cast<double>(i) - vals.size() / 2.0 + 0.5) * gap;
  std::shuffle(vals.begin(), vals.end(), rng.engine());
  std::copy(vals.begin(), vals.end(), t.data().begin());
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// f builds a tensor from variables on the tape; the loss is sum(f * R) for a
// fixed random R. Compares backward against central differences for every
// entry of every input.
inline GradCheck check_gradients(const std::function<kap::Var(kap::Tape&, const std::vector<kap::Var>&)>& f,
                                 std::vector<kap::Tensor> inputs, std::uint64_t seed, double h = 1e-6) {
  kap::Rng rng(seed);
  kap::Tensor weights;
  auto loss_of = [&](const std::vector<kap::Tensor>& xs, std::vector<std::vector<double>>* grads) {
    kap::Tape tape;
    std::vector<kap::Var> vars;
    for (const auto& x : xs) vars.push_back(grads ? tape.variable(x) : tape.constant(x));
    kap::Var out = f(tape, vars);
    if (weights.size() != out.value().size()) weights = random_tensor(out.shape(), rng);
    kap::Var loss = kap::sum(kap::mul(out, tape.constant(weights.reshaped(out.shape()))));
    if (grads) {
      tape.backward(loss);
      grads->clear();
      for (const auto& v : vars) grads->push_back(tape.grad(v));
    }
    return loss.value().item();
  };

  std::vector<std::vector<double>> analytic;
  loss_of(inputs, &analytic);
  GradCheck result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = loss_of(inputs, nullptr);
      inputs[k][i] = saved - h;
      const double down = loss_of(inputs, nullptr);
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k].empty() ? 0.0 : analytic[k][i];
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-3});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / scale);
      ++result.checked;
    }
  }
  return result;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("kapnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace kaptest
