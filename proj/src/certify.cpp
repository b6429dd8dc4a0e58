#include "kap/certify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "kap/error.hpp"
#include "kap/rng.hpp"
#include "kap/stats.hpp"

namespace kap {
namespace {

std::vector<std::size_t> sample_counts(const Classifier& clf, const Tensor& x, std::size_t draws, double sigma,
                                       std::size_t batch_size, Rng rng) {
  std::vector<std::size_t> counts(clf.num_classes(), 0);
  const std::size_t per = x.size();
  for (std::size_t done = 0; done < draws;) {
    const std::size_t m = std::min(batch_size, draws - done);
    std::vector<double> batch(m * per);
    for (std::size_t s = 0; s < m; ++s)
      for (std::size_t i = 0; i < per; ++i) batch[s * per + i] = x[i] + sigma * rng.normal();
    Shape shape = x.shape();
    shape[0] = m;
    for (int c : clf.predict(Tensor::from_unchecked(shape, std::move(batch)))) ++counts.at(static_cast<std::size_t>(c));
    done += m;
  }
  return counts;
}

std::size_t top_class(const std::vector<std::size_t>& counts) {
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

void CertifyConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("certification sigma must be > 0");
  if (n_select < 1) throw ParameterError("n_select must be >= 1");
  if (n_estimate < n_select) throw ParameterError("n_estimate must be >= n_select");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0,1)");
  if (batch_size < 1) throw ParameterError("certification batch size must be >= 1");
}

double radius_cap(double sigma) { return sigma * normal_quantile(1.0 - 1e-12); }

double certified_radius(double p_lower, double sigma) {
  if (p_lower <= 0.5) return 0.0;
  return sigma * normal_quantile(std::min(p_lower, 1.0 - 1e-12));
}

CertificationResult certify_sample(const Classifier& clf, const Tensor& x, const CertifyConfig& cfg,
                                   std::size_t sample_index) {
  cfg.validate();
  Tensor one = x;
  if (x.rank() == 0 || x.dim(0) != 1) {
    Shape shape{1};
    shape.insert(shape.end(), x.shape().begin(), x.shape().end());
    one = x.reshaped(shape);
  }
  const Rng rng = Rng(cfg.seed).derive(sample_index);
  const std::vector<std::size_t> select =
      sample_counts(clf, one, cfg.n_select, cfg.sigma, cfg.batch_size, rng.derive("select"));
  const std::size_t c = top_class(select);

  CertificationResult res;
  res.counts = sample_counts(clf, one, cfg.n_estimate, cfg.sigma, cfg.batch_size, rng.derive("estimate"));
  res.p_lower = clopper_pearson_lower(res.counts[c], cfg.n_estimate, cfg.alpha);
  if (res.p_lower > 0.5) {
    res.predicted_class = static_cast<int>(c);
    res.certified_radius = certified_radius(res.p_lower, cfg.sigma);
  }
  return res;
}

std::vector<CertificationResult> certify_dataset(const Classifier& clf, const Dataset& data, const CertifyConfig& cfg) {
  std::vector<CertificationResult> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t row[] = {i};
    out.push_back(certify_sample(clf, data.batch(row), cfg, i));
  }
  return out;
}

std::vector<std::pair<double, double>> certified_accuracy_curve(const std::vector<CertificationResult>& results,
                                                                std::span<const int> labels,
                                                                std::span<const double> radii) {
  if (results.size() != labels.size()) throw DimensionError("certified_accuracy_curve: results and labels differ");
  std::vector<std::pair<double, double>> curve;
  for (double r : radii) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < results.size(); ++i)
      ok += !results[i].abstained() && results[i].predicted_class == labels[i] && results[i].certified_radius >= r;
    curve.emplace_back(r, results.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(results.size()));
  }
  return curve;
}

std::vector<std::pair<double, double>> certified_accuracy_curve(const Classifier& clf, const Dataset& data,
                                                                const CertifyConfig& cfg,
                                                                std::span<const double> radii) {
  return certified_accuracy_curve(certify_dataset(clf, data, cfg), data.labels, radii);
}

void write_certification_csv(const std::vector<CertificationResult>& results, std::span<const int> labels,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  out << "idx,label,pred,radius,abstain\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const CertificationResult& r = results[i];
    out << i << ',' << labels[i] << ',' << r.predicted_class << ',' << r.certified_radius << ','
        << (r.abstained() ? 1 : 0) << '\n';
  }
}

}  // namespace kap
