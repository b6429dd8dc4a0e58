#include "kap/classifier.hpp"

#include <algorithm>

#include "kap/ops.hpp"

namespace kap {

Tensor NetworkClassifier::loss_gradient(const Tensor& batch, std::span<const int> labels,
                                        std::vector<double>& losses) const {
  Tape tape;
  Var x = tape.variable(batch);
  const ForwardResult r = net_->forward(tape, x);
  losses = cross_entropy_values(tape.value(r.logits), labels);
  // Summed loss keeps every row's gradient equal to its own sample's.
  tape.backward(cross_entropy(r.logits, labels, Reduction::sum));
  const Tensor& xv = tape.value(x);
  if (!xv.has_grad()) return Tensor(batch.shape(), 0.0);
  return Tensor::from_unchecked(batch.shape(), xv.grad());
}

std::vector<std::size_t> index_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows;
  rows.reserve(end > begin ? end - begin : 0);
  for (std::size_t i = begin; i < end; ++i) rows.push_back(i);
  return rows;
}

double accuracy(const Classifier& clf, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const auto rows = index_range(b, std::min(data.size(), b + batch_size));
    const std::vector<int> pred = clf.predict(data.batch(rows));
    for (std::size_t i = 0; i < rows.size(); ++i) correct += pred[i] == data.labels[rows[i]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double accuracy(const Network& net, const Dataset& data, std::size_t batch_size) {
  return accuracy(NetworkClassifier(net), data, batch_size);
}

}  // namespace kap
