#pragma once

#include <span>
#include <vector>

#include "kap/dataset.hpp"
#include "kap/network.hpp"

namespace kap {

/// Deterministic differentiable classifier over batches [N, ...].
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::size_t num_classes() const = 0;
  virtual Tensor logits(const Tensor& batch) const = 0;

  /// Per-sample cross-entropy losses and their gradients with respect to the
  /// input batch (each row differentiated on its own).
  virtual Tensor loss_gradient(const Tensor& batch, std::span<const int> labels, std::vector<double>& losses) const = 0;

  std::vector<int> predict(const Tensor& batch) const { return argmax_rows(logits(batch)); }
};

/// Eval-mode view of a Network: noise layers are inactive.
class NetworkClassifier final : public Classifier {
 public:
  explicit NetworkClassifier(const Network& net) : net_(&net) {}

  std::size_t num_classes() const override { return net_->num_classes(); }
  Tensor logits(const Tensor& batch) const override { return net_->logits(batch); }
  Tensor loss_gradient(const Tensor& batch, std::span<const int> labels, std::vector<double>& losses) const override;

  const Network& network() const { return *net_; }

 private:
  const Network* net_;
};

/// Fraction of samples whose eval prediction matches the label.
double accuracy(const Classifier& clf, const Dataset& data, std::size_t batch_size = 256);
double accuracy(const Network& net, const Dataset& data, std::size_t batch_size = 256);

/// Row indices [begin, end).
std::vector<std::size_t> index_range(std::size_t begin, std::size_t end);

}  // namespace kap
