#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kap/attacks.hpp"
#include "kap/config.hpp"
#include "kap/dataset.hpp"
#include "kap/network.hpp"

namespace kap {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double input_noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // PGD adversarial training with early stopping when set.
  std::optional<AttackConfig> adversarial;
  double holdout_fraction = 0.1;
  std::size_t patience = 5;

  void validate() const;
};

/// Reads `epochs`, `batch_size`, `lr`, `momentum`, `weight_decay`, `sigma`,
/// `seed` and, when `adversarial = pgd`, the `adv.*` attack keys.
TrainConfig train_config_from(const FlatConfig& cfg, TrainConfig base = {});

/// Momentum buffers, one per network parameter.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// One momentum SGD step on the noise-augmented batch:
///   v <- momentum * v + (grad + weight_decay * p),  p <- p - lr * v.
/// Returns the mean cross-entropy before the update.
double sgd_step(Network& net, SgdState& state, const Tensor& batch, std::span<const int> labels,
                const TrainConfig& cfg, Rng& rng);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double clean_acc = 0.0;
  double holdout_robust_acc = -1.0;  // adversarial training only
};

struct TrainReport {
  std::vector<EpochStats> curve;
  double final_clean_accuracy = 0.0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Shuffled minibatch training. With `adversarial`, a fixed 10% holdout is
/// set aside, every batch is replaced by PGD examples and the parameters
/// with the best holdout robust accuracy are kept.
TrainReport train(Network& net, const Dataset& data, const TrainConfig& cfg);

/// epoch,train_loss,clean_acc
void write_train_report_csv(const TrainReport& report, const std::string& path);

}  // namespace kap
