#include "kap/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "kap/error.hpp"
#include "kap/ops.hpp"

namespace kap {
namespace {

std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.engine()() % i]);
  return idx;
}

std::vector<Tensor> snapshot(const Network& net) {
  std::vector<Tensor> out;
  for (const Parameter& p : net.parameters()) out.push_back(p.value);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("lr must be >= 0");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be >= 0");
  if (!(input_noise_sigma >= 0.0)) throw ParameterError("sigma must be >= 0");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ParameterError("holdout fraction must lie in (0,1)");
  if (adversarial) adversarial->validate();
}

TrainConfig train_config_from(const FlatConfig& cfg, TrainConfig base) {
  base.epochs = static_cast<std::size_t>(cfg.get_int("epochs", static_cast<long long>(base.epochs)));
  base.batch_size = static_cast<std::size_t>(cfg.get_int("batch_size", static_cast<long long>(base.batch_size)));
  base.lr = cfg.get_double("lr", base.lr);
  base.momentum = cfg.get_double("momentum", base.momentum);
  base.weight_decay = cfg.get_double("weight_decay", base.weight_decay);
  base.input_noise_sigma = cfg.get_double("sigma", base.input_noise_sigma);
  base.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(base.seed)));
  base.patience = static_cast<std::size_t>(cfg.get_int("patience", static_cast<long long>(base.patience)));
  const std::string adv = cfg.get("adversarial", base.adversarial ? "pgd" : "none");
  if (adv == "pgd") {
    AttackConfig a = base.adversarial.value_or(AttackConfig{});
    a.norm = parse_norm(cfg.get("adv.norm", to_string(a.norm)));
    a.epsilon = cfg.get_double("adv.eps", a.epsilon);
    a.step_size = cfg.get_double("adv.step", a.step_size);
    a.iterations = static_cast<std::size_t>(cfg.get_int("adv.steps", static_cast<long long>(a.iterations)));
    a.restarts = static_cast<std::size_t>(cfg.get_int("adv.restarts", static_cast<long long>(a.restarts)));
    a.seed = base.seed;
    base.adversarial = a;
  } else if (adv == "none") {
    base.adversarial.reset();
  } else {
    throw ConfigError("adversarial must be 'none' or 'pgd', got '" + adv + "'");
  }
  base.validate();
  return base;
}

double sgd_step(Network& net, SgdState& state, const Tensor& batch, std::span<const int> labels,
                const TrainConfig& cfg, Rng& rng) {
  std::vector<Parameter>& params = net.parameters();
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const Parameter& p : params) state.velocity.emplace_back(p.value.size(), 0.0);
  }
  std::vector<double> xs(batch.data().begin(), batch.data().end());
  if (cfg.input_noise_sigma > 0.0)
    for (double& v : xs) v = std::clamp(v + cfg.input_noise_sigma * rng.normal(), 0.0, 1.0);

  Tape tape;
  ForwardOptions opts;
  opts.mode = Mode::train;
  opts.rng = &rng;
  opts.parameter_grads = true;
  const ForwardResult r = net.forward(tape, tape.constant(Tensor::from_unchecked(batch.shape(), std::move(xs))), opts);
  const Var loss = cross_entropy(r.logits, labels);
  const double value = tape.value(loss).item();
  if (!std::isfinite(value)) throw TrainingError("non-finite training loss");
  tape.backward(loss);

  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& t = tape.value(r.parameters[k]);
    std::span<double> p = params[k].value.data();
    std::vector<double>& v = state.velocity[k];
    const std::vector<double>& g = t.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = (g.empty() ? 0.0 : g[i]) + cfg.weight_decay * p[i];
      if (!std::isfinite(gi)) throw TrainingError("non-finite gradient for " + params[k].name);
      v[i] = cfg.momentum * v[i] + gi;
      p[i] -= cfg.lr * v[i];
    }
  }
  return value;
}

TrainReport train(Network& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  TrainReport report;
  const Rng root(cfg.seed);

  Dataset fit = data;
  Dataset holdout;
  if (cfg.adversarial) {
    const std::vector<std::size_t> perm = permutation(data.size(), root.derive("holdout"));
    const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.holdout_fraction * data.size()));
    if (n_hold >= data.size()) throw ParameterError("dataset too small for an adversarial holdout");
    holdout = data.subset(std::span(perm).first(n_hold));
    fit = data.subset(std::span(perm).subspan(n_hold));
  }

  SgdState state;
  std::vector<Tensor> best_params;
  double best_robust = -1.0;
  std::size_t since_best = 0;
  const NetworkClassifier clf(net);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Rng erng = root.derive("epoch").derive(epoch);
    const std::vector<std::size_t> order = permutation(fit.size(), erng.derive("shuffle"));
    Rng noise = erng.derive("noise");
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> rows = std::span(order).subspan(b, std::min(cfg.batch_size, order.size() - b));
      Tensor x = fit.batch(rows);
      const std::vector<int> y = fit.batch_labels(rows);
      if (cfg.adversarial) {
        AttackConfig a = *cfg.adversarial;
        a.seed = mix_seed(mix_seed(a.seed, epoch), b);
        x = pgd(clf, x, y, a);
      }
      total += sgd_step(net, state, x, y, cfg, noise);
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = batches ? total / static_cast<double>(batches) : 0.0;
    stats.clean_acc = accuracy(net, fit);
    if (cfg.adversarial) {
      stats.holdout_robust_acc = evaluate_robustness(clf, holdout, *cfg.adversarial).robust_accuracy;
      if (stats.holdout_robust_acc > best_robust) {
        best_robust = stats.holdout_robust_acc;
        best_params = snapshot(net);
        report.best_epoch = stats.epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        report.curve.push_back(stats);
        report.stopped_early = true;
        break;
      }
    }
    report.curve.push_back(stats);
  }
  if (cfg.adversarial && !best_params.empty()) {
    for (std::size_t k = 0; k < best_params.size(); ++k) net.parameters()[k].value = best_params[k];
  }
  if (!cfg.adversarial) report.best_epoch = report.curve.size();
  report.final_clean_accuracy = report.curve.empty() ? accuracy(net, data) : accuracy(net, fit);
  return report;
}

void write_train_report_csv(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(10);
  out << "epoch,train_loss,clean_acc\n";
  for (const EpochStats& e : report.curve) out << e.epoch << ',' << e.train_loss << ',' << e.clean_acc << '\n';
}

}  // namespace kap
