#include "kap/tape.hpp"

#include "kap/error.hpp"

namespace kap {

const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractError("unbound Var");
  return tape->value(*this);
}

Var Tape::push(Tensor value) {
  values_.push_back(std::move(value));
  return Var{this, values_.size() - 1};
}

void Tape::check_owned(Var v) const {
  if (v.tape != this || v.id >= values_.size()) throw ContractError("Var does not belong to this tape");
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return push(std::move(value));
}

Var Tape::variable(Tensor value) {
  value.set_requires_grad(true);
  return push(std::move(value));
}

Var Tape::leaf(Tensor value) { return push(std::move(value)); }

Var Tape::record(Tensor output, std::vector<Var> inputs, BackwardFn backward) {
  bool any = false;
  for (const Var& in : inputs) {
    check_owned(in);
    any = any || values_[in.id].requires_grad();
  }
#ifndef NDEBUG
  output.check_finite("op output");
#endif
  output.set_requires_grad(any);
  Var out = push(std::move(output));
  if (any) {
    Node node;
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) node.inputs.push_back(in.id);
    node.output = out.id;
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
  }
  return out;
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return values_[v.id];
}

const std::vector<double>& Tape::grad(Var v) const { return value(v).grad(); }

void Tape::backward(Var loss) {
  check_owned(loss);
  if (values_[loss.id].size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(values_[loss.id].shape()));
  }
  if (nodes_.empty() && !values_[loss.id].requires_grad()) {
    throw ContractError("backward() on an empty tape");
  }

  // Local buffers keep repeated backward calls from feeding earlier results
  // back through the graph; only the final per-value totals are accumulated.
  std::vector<std::vector<double>> local(values_.size());
  local[loss.id].assign(1, 1.0);

  std::vector<std::vector<double>*> grad_in;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& node = *it;
    if (node.output > loss.id || local[node.output].empty()) continue;
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!values_[in].requires_grad()) continue;
      if (local[in].empty()) local[in].assign(values_[in].size(), 0.0);
      grad_in[k] = &local[in];
    }
    node.backward(local[node.output], grad_in);
  }

  for (std::size_t id = 0; id < values_.size(); ++id) {
    if (!local[id].empty() && values_[id].requires_grad()) values_[id].accumulate_grad(local[id]);
  }
}

void Tape::zero_grad() {
  for (Tensor& t : values_) t.zero_grad();
}

}  // namespace kap
