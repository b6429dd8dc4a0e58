#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kap/layers.hpp"
#include "kap/rng.hpp"
#include "kap/tape.hpp"

namespace kap {

enum class Mode { train, eval };

struct ForwardOptions {
  Mode mode = Mode::eval;
  // Noise source for train mode or for noise forced on at inference.
  Rng* rng = nullptr;
  // When set, noise layers run with this sigma even in eval mode.
  std::optional<double> activation_sigma;
  // Record parameters as differentiable leaves.
  bool parameter_grads = false;
};

struct Parameter {
  std::string name;
  Tensor value;  // value.grad() accumulates training gradients
};

struct ForwardResult {
  Var logits;
  std::vector<Var> parameters;   // leaves, in parameters() order
  std::vector<Var> activations;  // output of every layer, in spec order
};

/// Feed-forward network assembled from a NetworkSpec.
///
/// Inputs are batched: [N, C, H, W] or [N, D]. Eval-mode forward passes are
/// deterministic and the network is not mutated by them, so concurrent eval
/// on separate tapes is safe.
class Network {
 public:
  /// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
  static Network build(NetworkSpec spec, std::uint64_t init_seed);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Shape>& layer_shapes() const { return shapes_; }
  std::size_t num_classes() const { return spec_.num_classes; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Index into parameters() of the weight of layer `layer_index`, if any.
  std::optional<std::size_t> weight_of_layer(std::size_t layer_index) const;

  ForwardResult forward(Tape& tape, Var input, const ForwardOptions& options = {}) const;

  /// Adds the tape gradients of a parameter_grads forward into parameters().
  void accumulate_gradients(const Tape& tape, const ForwardResult& result);
  void zero_grad();

  /// Eval-mode logits for a batch.
  Tensor logits(const Tensor& batch) const;
  std::vector<int> predict(const Tensor& batch) const;

  /// Binary checkpoint: shape table then little-endian float64 values.
  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  Network() = default;

  NetworkSpec spec_;
  std::vector<Shape> shapes_;
  std::vector<Parameter> params_;
  // Per layer: index of its weight in params_ (bias follows), or -1.
  std::vector<long> layer_param_;
};

struct Checkpoint {
  std::vector<Tensor> tensors;
};

Checkpoint read_checkpoint(const std::string& path);
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace kap
