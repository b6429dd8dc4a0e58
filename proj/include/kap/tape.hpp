#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "kap/tensor.hpp"

namespace kap {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return value().requires_grad(); }
};

/// Dynamically recorded computation graph for reverse-mode differentiation.
///
/// Values are appended in evaluation order, so every node's inputs precede
/// it. `backward` walks the nodes once in reverse and adds dLoss/dValue into
/// the `grad` of every value that requires a gradient; calling it again
/// without `zero_grad` accumulates. A tape is not thread-safe.
class Tape {
 public:
  // grad_in[k] points at the gradient buffer of input k, or is null when that
  // input does not require a gradient.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Keeps the tensor's own requires_grad flag.
  Var leaf(Tensor value);

  /// Appends an op output. The backward rule is dropped when no input
  /// requires a gradient.
  Var record(Tensor output, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  const Tensor& value(std::size_t id) const { return values_[id]; }
  const std::vector<double>& grad(Var v) const;

  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return values_.size(); }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  Var push(Tensor value);
  void check_owned(Var v) const;

  std::deque<Tensor> values_;
  std::vector<Node> nodes_;
};

}  // namespace kap
