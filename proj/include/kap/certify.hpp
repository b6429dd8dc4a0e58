#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kap/classifier.hpp"
#include "kap/dataset.hpp"

namespace kap {

struct CertifyConfig {
  double sigma = 0.25;
  std::size_t n_select = 100;
  std::size_t n_estimate = 10000;
  double alpha = 0.001;
  std::uint64_t seed = 0;
  std::size_t batch_size = 500;

  void validate() const;
};

constexpr int kAbstain = -1;

struct CertificationResult {
  int predicted_class = kAbstain;
  double certified_radius = 0.0;
  double p_lower = 0.0;
  std::vector<std::size_t> counts;  // estimation draws per class

  bool abstained() const { return predicted_class == kAbstain; }
};

/// Largest radius ever reported: sigma * Phi^-1(1 - 1e-12).
double radius_cap(double sigma);

/// Radius for a lower bound on the top-class probability; 0 at or below 1/2.
double certified_radius(double p_lower, double sigma);

/// Randomized-smoothing certificate for one sample (shape [1, ...] or the
/// bare sample shape). The candidate class comes from n_select noisy draws,
/// its probability bound from a separate n_estimate draws.
CertificationResult certify_sample(const Classifier& clf, const Tensor& x, const CertifyConfig& cfg,
                                   std::size_t sample_index = 0);

std::vector<CertificationResult> certify_dataset(const Classifier& clf, const Dataset& data, const CertifyConfig& cfg);

/// Fraction of samples certified correct at radius >= r, for each r.
std::vector<std::pair<double, double>> certified_accuracy_curve(const std::vector<CertificationResult>& results,
                                                                std::span<const int> labels,
                                                                std::span<const double> radii);

std::vector<std::pair<double, double>> certified_accuracy_curve(const Classifier& clf, const Dataset& data,
                                                                const CertifyConfig& cfg,
                                                                std::span<const double> radii);

/// idx,label,pred,radius,abstain
void write_certification_csv(const std::vector<CertificationResult>& results, std::span<const int> labels,
                             const std::string& path);

}  // namespace kap
