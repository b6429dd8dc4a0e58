#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kap/classifier.hpp"
#include "kap/dataset.hpp"
#include "kap/network.hpp"

namespace kap {

enum class Norm { l2, linf };

Norm parse_norm(const std::string& text);
std::string to_string(Norm norm);

struct AttackConfig {
  Norm norm = Norm::l2;
  double epsilon = 1.0;
  double step_size = 4.0 / 255.0;
  std::size_t iterations = 100;
  std::size_t restarts = 1;
  bool random_start = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Projected gradient ascent on the cross-entropy inside the epsilon ball
/// around x, intersected with the [0,1] box. Returns the restart with the
/// highest final loss for each sample. Sample i of the batch draws its random
/// starts from (seed, first_index + i, restart), so results do not depend on
/// how a dataset is split into batches.
///
/// When `loss_trace` is given it receives the summed batch loss of the first
/// restart before each step and after the last one.
Tensor pgd(const Classifier& clf, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
           std::size_t first_index = 0, std::vector<double>* loss_trace = nullptr);

/// Single signed-gradient step of size epsilon.
Tensor fgsm(const Classifier& clf, const Tensor& x, std::span<const int> labels, double epsilon);

/// Best of `n_probes` random points on the epsilon sphere (L2) or cube corners
/// (Linf), by loss, clamped to [0,1].
Tensor random_probe(const Classifier& clf, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
                    std::size_t n_probes, std::size_t first_index = 0);

/// Norm of each row of (a - b).
std::vector<double> perturbation_norms(const Tensor& a, const Tensor& b, Norm norm);

struct SampleOutcome {
  int label = 0;
  int clean_pred = 0;
  int adv_pred = 0;
  double pert_norm = 0.0;
};

struct RobustnessReport {
  double epsilon = 0.0;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
  std::vector<SampleOutcome> per_sample;
};

enum class AttackKind { pgd, fgsm, random_probe };

struct AttackOptions {
  AttackKind kind = AttackKind::pgd;
  std::size_t n_probes = 100;
  std::size_t batch_size = 64;
};

/// Crafts adversarial examples for `data` on `source`.
Tensor craft_adversarial(const Classifier& source, const Dataset& data, const AttackConfig& cfg,
                         const AttackOptions& options = {});

RobustnessReport evaluate_robustness(const Classifier& clf, const Dataset& data, const AttackConfig& cfg,
                                     const AttackOptions& options = {});

/// One report per epsilon; every other setting is shared.
std::vector<RobustnessReport> epsilon_sweep(const Classifier& clf, const Dataset& data, const AttackConfig& cfg,
                                            std::span<const double> epsilons, const AttackOptions& options = {});

/// Examples crafted on `source`, scored on `target`.
RobustnessReport transfer_attack(const Classifier& source, const Classifier& target, const Dataset& data,
                                 const AttackConfig& cfg, const AttackOptions& options = {});

/// Majority vote over `n_draws` noisy eval passes (ties go to the lowest
/// class). Input noise is added to the images and clamped to [0,1];
/// activation noise switches the network's noise layers on at sigma.
double noisy_inference_eval(const Network& net, const Tensor& examples, std::span<const int> labels, bool input_noise,
                            bool activation_noise, double sigma, std::size_t n_draws, std::uint64_t seed);

/// idx,label,clean_pred,adv_pred,pert_norm
void write_robustness_csv(const RobustnessReport& report, const std::string& path);

}  // namespace kap
