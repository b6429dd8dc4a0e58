#include "kap/tensor.hpp"

#include <cmath>
#include <sstream>

#include "kap/error.hpp"

namespace kap {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
  check_finite("tensor construction");
}

Tensor::Tensor(Shape shape, double fill)
    : Tensor(shape, std::vector<double>(shape_size(shape), fill)) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape_));
  return data_[0];
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != data_.size()) throw DimensionError("gradient length does not match tensor");
  if (grad_.empty()) {
    grad_.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return from_unchecked(std::move(shape), data_);
}

void Tensor::check_finite(std::string_view where) const {
  for (double v : data_) {
    if (!std::isfinite(v)) throw ContractError("non-finite value in " + std::string(where));
  }
}

Tensor Tensor::from_unchecked(Shape shape, std::vector<double> data) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

}  // namespace kap
