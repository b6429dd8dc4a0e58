#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kap {

double normal_cdf(double x);

/// Inverse standard normal CDF for p in (0,1): rational approximation refined
/// by one Halley step.
double normal_quantile(double p);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// x with I_x(a, b) == p.
double beta_quantile(double p, double a, double b);

/// One-sided lower confidence bound at level alpha on a binomial proportion
/// with k successes in n trials (exact Beta quantile).
double clopper_pearson_lower(std::size_t k, std::size_t n, double alpha);

/// Ranks starting at 1, ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> v);

double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average ranks; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

double mean_of(std::span<const double> v);
/// Population standard deviation.
double stddev_of(std::span<const double> v);

}  // namespace kap
