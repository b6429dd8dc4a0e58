#include "kap/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "kap/error.hpp"
#include "kap/ops.hpp"
#include "kap/rng.hpp"

namespace kap {
namespace {

double row_norm(std::span<const double> v, Norm norm) {
  double acc = 0.0;
  if (norm == Norm::l2) {
    for (double e : v) acc += e * e;
    return std::sqrt(acc);
  }
  for (double e : v) acc = std::max(acc, std::abs(e));
  return acc;
}

void project(std::span<double> delta, std::span<const double> x, Norm norm, double eps) {
  if (norm == Norm::l2) {
    const double n = row_norm(delta, Norm::l2);
    if (n > eps) {
      const double f = eps / n;
      for (double& d : delta) d *= f;
    }
  } else {
    for (double& d : delta) d = std::clamp(d, -eps, eps);
  }
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = std::clamp(x[i] + delta[i], 0.0, 1.0) - x[i];
}

void random_in_ball(std::span<double> delta, Norm norm, double eps, Rng& rng) {
  if (norm == Norm::linf) {
    for (double& d : delta) d = eps * (2.0 * rng.uniform() - 1.0);
    return;
  }
  for (double& d : delta) d = rng.normal();
  const double n = row_norm(delta, Norm::l2);
  const double radius = eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(delta.size()));
  for (double& d : delta) d = n > 0.0 ? d * radius / n : 0.0;
}

Tensor add_delta(const Tensor& x, const std::vector<double>& delta) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] + delta[i], 0.0, 1.0);
  return Tensor::from_unchecked(x.shape(), std::move(out));
}

std::vector<double> losses_at(const Classifier& clf, const Tensor& x, std::span<const int> labels) {
  return cross_entropy_values(clf.logits(x), labels);
}

void check_batch(const Tensor& x, std::span<const int> labels) {
  if (x.rank() < 2 || x.dim(0) != labels.size()) throw DimensionError("attack: batch and labels disagree");
}

}  // namespace

Norm parse_norm(const std::string& text) {
  if (text == "l2" || text == "L2" || text == "2") return Norm::l2;
  if (text == "linf" || text == "Linf" || text == "inf") return Norm::linf;
  throw ParameterError("unknown norm '" + text + "' (use l2 or linf)");
}

std::string to_string(Norm norm) { return norm == Norm::l2 ? "l2" : "linf"; }

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ParameterError("attack epsilon must be >= 0");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ParameterError("attack step size must be > 0");
  if (iterations < 1) throw ParameterError("attack needs at least one iteration");
  if (restarts < 1) throw ParameterError("attack needs at least one restart");
}

Tensor pgd(const Classifier& clf, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
           std::size_t first_index, std::vector<double>* loss_trace) {
  cfg.validate();
  check_batch(x, labels);
  if (loss_trace) loss_trace->clear();
  if (cfg.epsilon == 0.0) return x;

  const std::size_t n = x.dim(0), per = x.size() / n;
  const Rng root(cfg.seed);
  std::vector<double> best_delta(x.size(), 0.0);
  std::vector<double> best_loss(n, -std::numeric_limits<double>::infinity());
  std::vector<double> delta(x.size());
  std::vector<double> losses;

  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    std::fill(delta.begin(), delta.end(), 0.0);
    if (cfg.random_start) {
      for (std::size_t s = 0; s < n; ++s) {
        Rng rng = root.derive(first_index + s).derive(r);
        std::span<double> d(delta.data() + s * per, per);
        random_in_ball(d, cfg.norm, cfg.epsilon, rng);
        project(d, x.data().subspan(s * per, per), cfg.norm, cfg.epsilon);
      }
    }
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      const Tensor g = clf.loss_gradient(add_delta(x, delta), labels, losses);
      if (loss_trace && r == 0) {
        double total = 0.0;
        for (double l : losses) total += l;
        loss_trace->push_back(total);
      }
      for (double v : g.data())
        if (!std::isfinite(v)) throw AttackError("non-finite input gradient during PGD");
      for (std::size_t s = 0; s < n; ++s) {
        std::span<double> d(delta.data() + s * per, per);
        std::span<const double> gs = g.data().subspan(s * per, per);
        if (cfg.norm == Norm::linf) {
          for (std::size_t i = 0; i < per; ++i) d[i] += cfg.step_size * static_cast<double>((gs[i] > 0) - (gs[i] < 0));
        } else {
          const double gn = row_norm(gs, Norm::l2);
          if (gn > 0.0)
            for (std::size_t i = 0; i < per; ++i) d[i] += cfg.step_size * gs[i] / gn;
        }
        project(d, x.data().subspan(s * per, per), cfg.norm, cfg.epsilon);
      }
    }
    const bool need_loss = cfg.restarts > 1 || (loss_trace && r == 0);
    if (!need_loss) {
      best_delta = delta;
      break;
    }
    losses = losses_at(clf, add_delta(x, delta), labels);
    if (loss_trace && r == 0) {
      double total = 0.0;
      for (double l : losses) total += l;
      loss_trace->push_back(total);
    }
    for (std::size_t s = 0; s < n; ++s) {
      if (losses[s] > best_loss[s]) {
        best_loss[s] = losses[s];
        std::copy_n(delta.begin() + static_cast<std::ptrdiff_t>(s * per), per,
                    best_delta.begin() + static_cast<std::ptrdiff_t>(s * per));
      }
    }
  }
  return add_delta(x, best_delta);
}

Tensor fgsm(const Classifier& clf, const Tensor& x, std::span<const int> labels, double epsilon) {
  AttackConfig cfg;
  cfg.norm = Norm::linf;
  cfg.epsilon = epsilon;
  cfg.step_size = epsilon > 0.0 ? epsilon : 1.0;
  cfg.iterations = 1;
  cfg.restarts = 1;
  cfg.random_start = false;
  return pgd(clf, x, labels, cfg);
}

Tensor random_probe(const Classifier& clf, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
                    std::size_t n_probes, std::size_t first_index) {
  cfg.validate();
  check_batch(x, labels);
  if (n_probes == 0 || cfg.epsilon == 0.0) return x;
  const std::size_t n = x.dim(0), per = x.size() / n;
  const Rng root = Rng(cfg.seed).derive("probe");
  std::vector<Rng> rngs;
  for (std::size_t s = 0; s < n; ++s) rngs.push_back(root.derive(first_index + s));

  std::vector<double> best_delta(x.size(), 0.0);
  std::vector<double> best_loss(n, -std::numeric_limits<double>::infinity());
  std::vector<double> delta(x.size());
  for (std::size_t p = 0; p < n_probes; ++p) {
    for (std::size_t s = 0; s < n; ++s) {
      std::span<double> d(delta.data() + s * per, per);
      if (cfg.norm == Norm::linf) {
        for (double& v : d) v = rngs[s].uniform() < 0.5 ? -cfg.epsilon : cfg.epsilon;
      } else {
        for (double& v : d) v = rngs[s].normal();
        const double norm = row_norm(d, Norm::l2);
        for (double& v : d) v = norm > 0.0 ? v * cfg.epsilon / norm : 0.0;
      }
      project(d, x.data().subspan(s * per, per), cfg.norm, cfg.epsilon);
    }
    const std::vector<double> losses = losses_at(clf, add_delta(x, delta), labels);
    for (std::size_t s = 0; s < n; ++s) {
      if (losses[s] > best_loss[s]) {
        best_loss[s] = losses[s];
        std::copy_n(delta.begin() + static_cast<std::ptrdiff_t>(s * per), per,
                    best_delta.begin() + static_cast<std::ptrdiff_t>(s * per));
      }
    }
  }
  return add_delta(x, best_delta);
}

std::vector<double> perturbation_norms(const Tensor& a, const Tensor& b, Norm norm) {
  if (a.shape() != b.shape() || a.rank() < 1) throw DimensionError("perturbation_norms: shape mismatch");
  const std::size_t n = a.dim(0), per = a.size() / n;
  std::vector<double> out(n);
  std::vector<double> diff(per);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < per; ++i) diff[i] = a[s * per + i] - b[s * per + i];
    out[s] = row_norm(diff, norm);
  }
  return out;
}

Tensor craft_adversarial(const Classifier& source, const Dataset& data, const AttackConfig& cfg,
                         const AttackOptions& options) {
  cfg.validate();
  std::vector<double> out;
  out.reserve(data.images.size());
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t b = 0; b < data.size(); b += bs) {
    const auto rows = index_range(b, std::min(data.size(), b + bs));
    const Tensor x = data.batch(rows);
    const std::vector<int> y = data.batch_labels(rows);
    Tensor adv;
    switch (options.kind) {
      case AttackKind::pgd: adv = pgd(source, x, y, cfg, b); break;
      case AttackKind::fgsm: adv = fgsm(source, x, y, cfg.epsilon); break;
      case AttackKind::random_probe: adv = random_probe(source, x, y, cfg, options.n_probes, b); break;
    }
    out.insert(out.end(), adv.data().begin(), adv.data().end());
  }
  return Tensor::from_unchecked(data.images.shape(), std::move(out));
}

RobustnessReport transfer_attack(const Classifier& source, const Classifier& target, const Dataset& data,
                                 const AttackConfig& cfg, const AttackOptions& options) {
  const Tensor adv = craft_adversarial(source, data, cfg, options);
  RobustnessReport report;
  report.epsilon = cfg.epsilon;
  const std::vector<double> norms = perturbation_norms(adv, data.images, cfg.norm);
  const std::size_t bs = 256;
  std::size_t clean_ok = 0, adv_ok = 0;
  for (std::size_t b = 0; b < data.size(); b += bs) {
    const auto rows = index_range(b, std::min(data.size(), b + bs));
    const std::vector<int> clean = target.predict(data.batch(rows));
    std::vector<double> chunk(adv.data().begin() + static_cast<std::ptrdiff_t>(b * data.sample_size()),
                              adv.data().begin() + static_cast<std::ptrdiff_t>((b + rows.size()) * data.sample_size()));
    Shape shape = adv.shape();
    shape[0] = rows.size();
    const std::vector<int> advp = target.predict(Tensor::from_unchecked(shape, std::move(chunk)));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int y = data.labels[rows[i]];
      report.per_sample.push_back({y, clean[i], advp[i], norms[rows[i]]});
      clean_ok += clean[i] == y;
      adv_ok += advp[i] == y;
    }
  }
  if (data.size() > 0) {
    report.clean_accuracy = static_cast<double>(clean_ok) / static_cast<double>(data.size());
    report.robust_accuracy = static_cast<double>(adv_ok) / static_cast<double>(data.size());
  }
  return report;
}

RobustnessReport evaluate_robustness(const Classifier& clf, const Dataset& data, const AttackConfig& cfg,
                                     const AttackOptions& options) {
  return transfer_attack(clf, clf, data, cfg, options);
}

std::vector<RobustnessReport> epsilon_sweep(const Classifier& clf, const Dataset& data, const AttackConfig& cfg,
                                            std::span<const double> epsilons, const AttackOptions& options) {
  std::vector<RobustnessReport> out;
  for (double eps : epsilons) {
    AttackConfig c = cfg;
    c.epsilon = eps;
    out.push_back(evaluate_robustness(clf, data, c, options));
  }
  return out;
}

double noisy_inference_eval(const Network& net, const Tensor& examples, std::span<const int> labels, bool input_noise,
                            bool activation_noise, double sigma, std::size_t n_draws, std::uint64_t seed) {
  if (sigma < 0.0) throw ParameterError("noise sigma must be >= 0");
  if (n_draws < 1) throw ParameterError("noisy inference needs at least one draw");
  check_batch(examples, labels);
  const std::size_t n = examples.dim(0), per = examples.size() / n, classes = net.num_classes();
  if (sigma == 0.0 || (!input_noise && !activation_noise)) n_draws = 1;

  std::vector<std::size_t> votes(n * classes, 0);
  const Rng root(seed);
  const std::size_t bs = 256;
  for (std::size_t d = 0; d < n_draws; ++d) {
    for (std::size_t b = 0; b < n; b += bs) {
      const std::size_t m = std::min(n, b + bs) - b;
      Rng rng = root.derive(d).derive(b);
      std::vector<double> xs(examples.data().begin() + static_cast<std::ptrdiff_t>(b * per),
                             examples.data().begin() + static_cast<std::ptrdiff_t>((b + m) * per));
      if (input_noise && sigma > 0.0)
        for (double& v : xs) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
      Shape shape = examples.shape();
      shape[0] = m;
      Tape tape;
      ForwardOptions opts;
      opts.rng = &rng;
      if (activation_noise && sigma > 0.0) opts.activation_sigma = sigma;
      const ForwardResult r = net.forward(tape, tape.constant(Tensor::from_unchecked(shape, std::move(xs))), opts);
      const std::vector<int> pred = argmax_rows(tape.value(r.logits));
      for (std::size_t i = 0; i < m; ++i) ++votes[(b + i) * classes + static_cast<std::size_t>(pred[i])];
    }
  }
  std::size_t correct = 0;
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (votes[s * classes + c] > votes[s * classes + best]) best = c;
    correct += static_cast<int>(best) == labels[s];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void write_robustness_csv(const RobustnessReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "idx,label,clean_pred,adv_pred,pert_norm\n";
  out.precision(17);
  for (std::size_t i = 0; i < report.per_sample.size(); ++i) {
    const SampleOutcome& s = report.per_sample[i];
    out << i << ',' << s.label << ',' << s.clean_pred << ',' << s.adv_pred << ',' << s.pert_norm << '\n';
  }
}

}  // namespace kap
