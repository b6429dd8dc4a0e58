#include "kap/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "kap/analysis.hpp"
#include "kap/attacks.hpp"
#include "kap/certify.hpp"
#include "kap/classifier.hpp"
#include "kap/dataset.hpp"
#include "kap/error.hpp"
#include "kap/network.hpp"
#include "kap/rng.hpp"

namespace fs = std::filesystem;

namespace kap {
namespace {

const std::map<std::string, std::set<std::string>>& allowed_args() {
  static const std::set<std::string> attack = {"norm", "eps", "steps", "step", "step_frac", "restarts", "random_start",
                                               "kind", "probes", "limit"};
  static const std::map<std::string, std::set<std::string>> table = [] {
    std::map<std::string, std::set<std::string>> t;
    t["attack"] = attack;
    t["transfer"] = attack;
    t["transfer"].insert("source");
    t["noisy"] = attack;
    for (const char* k : {"sigma", "draws", "input", "activation"}) t["noisy"].insert(k);
    t["certify"] = {"sigma", "n0", "n", "alpha", "limit", "radii"};
    t["analyze topo"] = {"layer", "grid"};
    t["analyze smooth"] = {"layer"};
    t["analyze kernels"] = {"layer", "grid"};
    t["analyze perturb"] = attack;
    for (const char* k : {"sigma", "draws"}) t["analyze perturb"].insert(k);
    t["analyze gradprofile"] = {"nk", "K", "seed", "dim"};
    t["analyze variance"] = {"K", "sigma", "samples"};
    return t;
  }();
  return table;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || p.rfind("synthetic:", 0) == 0 || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

ManifestStep parse_step(const std::string& name, const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  if (words.empty()) throw ConfigError("step '" + name + "': empty definition");
  ManifestStep step;
  step.name = name;
  step.kind = words[0];
  std::size_t first_arg = 1;
  if (step.kind == "analyze") {
    if (words.size() < 2) throw ConfigError("step '" + name + "': analyze needs a subcommand");
    step.sub = words[1];
    first_arg = 2;
  }
  const std::string key = step.sub.empty() ? step.kind : step.kind + " " + step.sub;
  const auto it = allowed_args().find(key);
  if (it == allowed_args().end()) throw ConfigError("step '" + name + "': unknown step kind '" + key + "'");
  for (std::size_t i = first_arg; i < words.size(); ++i) {
    const auto eq = words[i].find('=');
    if (eq == std::string::npos) throw ConfigError("step '" + name + "': argument '" + words[i] + "' is not key=value");
    const std::string k = words[i].substr(0, eq);
    if (!it->second.count(k)) throw ConfigError("step '" + name + "': unknown argument '" + k + "' for " + key);
    step.args[k] = words[i].substr(eq + 1);
  }
  return step;
}

std::string arg(const ManifestStep& s, const std::string& k, const std::string& fallback) {
  const auto it = s.args.find(k);
  return it == s.args.end() ? fallback : it->second;
}

double arg_double(const ManifestStep& s, const std::string& k, double fallback) {
  const auto it = s.args.find(k);
  return it == s.args.end() ? fallback : parse_double(it->second, s.name + "." + k);
}

long long arg_int(const ManifestStep& s, const std::string& k, long long fallback) {
  const auto it = s.args.find(k);
  return it == s.args.end() ? fallback : parse_int(it->second, s.name + "." + k);
}

std::vector<std::string> arg_list(const ManifestStep& s, const std::string& k, const std::string& fallback) {
  std::vector<std::string> out;
  for (const std::string& e : split(arg(s, k, fallback), ','))
    if (!e.empty()) out.push_back(e);
  return out;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& text, const std::string& what) {
  const std::vector<std::string> rc = split(text, 'x');
  if (rc.size() != 2) throw ConfigError(what + ": grid must be RxC");
  return {static_cast<std::size_t>(parse_int(rc[0], what)), static_cast<std::size_t>(parse_int(rc[1], what))};
}

AttackConfig attack_for(const ManifestStep& s, double eps, std::uint64_t seed) {
  AttackConfig a;
  a.norm = parse_norm(arg(s, "norm", "l2"));
  a.epsilon = eps;
  a.iterations = static_cast<std::size_t>(arg_int(s, "steps", 10));
  a.restarts = static_cast<std::size_t>(arg_int(s, "restarts", 1));
  a.random_start = parse_bool(arg(s, "random_start", "0"), s.name + ".random_start");
  const double frac = arg_double(s, "step_frac", 0.25);
  a.step_size = s.args.count("step") ? arg_double(s, "step", 0.0) : (eps > 0.0 ? frac * eps : 1.0);
  a.seed = seed;
  return a;
}

AttackOptions attack_options(const ManifestStep& s) {
  AttackOptions o;
  const std::string kind = arg(s, "kind", "pgd");
  if (kind == "pgd") o.kind = AttackKind::pgd;
  else if (kind == "fgsm") o.kind = AttackKind::fgsm;
  else if (kind == "probe") o.kind = AttackKind::random_probe;
  else throw ConfigError("step '" + s.name + "': unknown attack kind '" + kind + "'");
  o.n_probes = static_cast<std::size_t>(arg_int(s, "probes", 100));
  return o;
}

// Touches every argument once so bad values fail at load time.
void check_step_args(const ManifestStep& s) {
  for (const auto& [k, v] : s.args) {
    if (k == "eps" || k == "radii") {
      for (const std::string& e : split(v, ',')) parse_double(e, s.name + "." + k);
    } else if (k == "norm") {
      try {
        parse_norm(v);
      } catch (const ParameterError& e) {
        throw ConfigError("step '" + s.name + "': " + e.what());
      }
    } else if (k == "kind") {
      attack_options(s);
    } else if (k == "grid") {
      parse_grid(v, s.name + ".grid");
    } else if (k == "random_start" || k == "input" || k == "activation") {
      parse_bool(v, s.name + "." + k);
    } else if (k == "source") {
      // checked against the point list
    } else if (k == "step" || k == "step_frac" || k == "sigma" || k == "alpha") {
      parse_double(v, s.name + "." + k);
    } else {
      parse_int(v, s.name + "." + k);
    }
  }
}

Dataset limited(const Dataset& d, const ManifestStep& s) {
  const long long limit = arg_int(s, "limit", 0);
  return limit > 0 ? d.head(static_cast<std::size_t>(limit)) : d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

Manifest load_manifest(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("manifest not found: " + path);
  const std::string text = read_text_file(path);
  const FlatConfig cfg = FlatConfig::parse(text, path);

  // FlatConfig folds repeated keys, so duplicates are found on the raw text.
  std::set<std::string> seen;
  {
    std::istringstream is(text);
    for (std::string line; std::getline(is, line);) {
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(line.substr(0, eq));
      if (key.rfind("step.", 0) == 0 && !seen.insert(key).second) {
        throw ConfigError(path + ": duplicate step name '" + key.substr(5) + "'");
      }
    }
  }

  Manifest m;
  m.path = path;
  m.base_dir = fs::absolute(path).parent_path().string();
  m.name = cfg.get("name", fs::path(path).stem().string());
  m.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  m.output_dir = resolve(m.base_dir, cfg.get("output_dir", m.name + "_out"));
  m.train_data = resolve(m.base_dir, cfg.get("train_data", ""));
  m.test_data = resolve(m.base_dir, cfg.get("test_data", ""));
  m.data_shape = cfg.get("data_shape", "");
  m.train = cfg.with_prefix("train.");
  train_config_from(m.train);

  static const std::set<std::string> top = {"name",       "seed",       "output_dir", "train_data", "test_data",
                                            "data_shape", "train_labels", "test_labels"};
  for (const auto& [k, v] : cfg.entries()) {
    if (k.rfind("train.", 0) == 0) continue;
    if (k.rfind("step.", 0) == 0) {
      m.steps.push_back(parse_step(k.substr(5), v));
      continue;
    }
    if (k.rfind("point.", 0) == 0) {
      const std::string rest = k.substr(6);
      const auto dot = rest.find('.');
      if (dot == std::string::npos || dot == 0) throw ConfigError(path + ": malformed point key '" + k + "'");
      const std::string name = rest.substr(0, dot), field = rest.substr(dot + 1);
      auto it = std::find_if(m.points.begin(), m.points.end(), [&](const ManifestPoint& p) { return p.name == name; });
      if (it == m.points.end()) {
        m.points.push_back({name, "", {}, {}});
        it = m.points.end() - 1;
      }
      if (field == "spec") {
        it->spec_path = resolve(m.base_dir, v);
      } else if (field.rfind("train.", 0) == 0) {
        it->train_overrides.set(field.substr(6), v);
      } else {
        throw ConfigError(path + ": unknown point field '" + field + "' for point '" + name + "'");
      }
      continue;
    }
    if (!top.count(k)) throw ConfigError(path + ": unknown key '" + k + "'");
  }

  if (!m.points.empty()) {
    if (m.train_data.empty()) throw ConfigError(path + ": train_data is required when points are defined");
    if (m.test_data.empty()) throw ConfigError(path + ": test_data is required when points are defined");
    for (const std::string& d : {m.train_data, m.test_data}) {
      if (d.rfind("synthetic:", 0) != 0 && !fs::exists(d)) throw ConfigError(path + ": data file not found: " + d);
    }
  }
  for (ManifestPoint& p : m.points) {
    if (p.spec_path.empty()) throw ConfigError(path + ": point '" + p.name + "' has no spec");
    if (!fs::exists(p.spec_path)) throw ConfigError(path + ": spec file not found for point '" + p.name + "': " + p.spec_path);
    try {
      p.spec = load_network_spec(p.spec_path);
      infer_shapes(p.spec);
    } catch (const Error& e) {
      throw ConfigError(path + ": point '" + p.name + "': " + e.what());
    }
    FlatConfig merged = m.train;
    for (const auto& [k, v] : p.train_overrides.entries()) merged.set(k, v);
    train_config_from(merged);
  }
  for (std::size_t i = 0; i < m.steps.size(); ++i) {
    const ManifestStep& s = m.steps[i];
    check_step_args(s);
    if (s.kind == "transfer") {
      const std::string src = arg(s, "source", "");
      if (std::none_of(m.points.begin(), m.points.end(), [&](const ManifestPoint& p) { return p.name == src; })) {
        throw ConfigError(path + ": step '" + s.name + "' names unknown source point '" + src + "'");
      }
    }
  }
  return m;
}

void execute_manifest(const Manifest& m, std::ostream& log, const std::string& output_dir_override) {
  const fs::path out = output_dir_override.empty() ? fs::path(m.output_dir) : fs::path(output_dir_override);
  fs::create_directories(out);
  const Rng root(m.seed);

  std::vector<std::string> columns{"point", "clean_acc"};
  for (const ManifestStep& s : m.steps)
    if (s.kind == "attack" || s.kind == "transfer")
      for (const std::string& e : arg_list(s, "eps", "1")) columns.push_back(s.name + "@" + e);
  std::ostringstream summary;
  for (std::size_t i = 0; i < columns.size(); ++i) summary << (i ? "," : "") << columns[i];
  summary << '\n';
  write_text(out / "summary.csv", summary.str());
  if (m.points.empty()) return;

  const Dataset train_set = load_dataset(m.train_data, "", m.data_shape);
  const Dataset test_set = load_dataset(m.test_data, "", m.data_shape);
  std::map<std::string, Network> trained;

  for (const ManifestPoint& p : m.points) {
    const Rng prng = root.derive("point").derive(p.name);
    FlatConfig merged = m.train;
    for (const auto& [k, v] : p.train_overrides.entries()) merged.set(k, v);
    TrainConfig tc = train_config_from(merged);
    tc.seed = prng.derive("train").seed();
    if (tc.adversarial) tc.adversarial->seed = prng.derive("train").derive("attack").seed();

    Network net = Network::build(p.spec, prng.derive("init").seed());
    const TrainReport rep = train(net, train_set, tc);
    net.save((out / (p.name + ".ckpt")).string());
    write_train_report_csv(rep, (out / (p.name + ".train.csv")).string());
    const NetworkClassifier clf(net);
    const double clean = accuracy(clf, test_set);
    log << "point " << p.name << ": trained " << rep.curve.size() << " epochs, test clean accuracy " << fmt(clean)
        << '\n';
    std::vector<std::string> row{p.name, fmt(clean)};

    for (const ManifestStep& s : m.steps) {
      const Rng srng = prng.derive("step").derive(s.name);
      const std::string stem = p.name + "." + s.name;
      try {
        if (s.kind == "attack" || s.kind == "transfer") {
          const Dataset data = limited(test_set, s);
          const AttackOptions opts = attack_options(s);
          const Network* source = &net;
          if (s.kind == "transfer" && arg(s, "source", "") != p.name) {
            const auto it = trained.find(arg(s, "source", ""));
            if (it == trained.end()) throw ConfigError("source point '" + arg(s, "source", "") + "' is not trained yet");
            source = &it->second;
          }
          const NetworkClassifier src(*source);
          for (const std::string& e : arg_list(s, "eps", "1")) {
            const AttackConfig a = attack_for(s, parse_double(e, s.name + ".eps"), srng.derive("attack").seed());
            const RobustnessReport r = transfer_attack(src, clf, data, a, opts);
            write_robustness_csv(r, (out / (stem + ".eps" + e + ".csv")).string());
            row.push_back(fmt(r.robust_accuracy));
            log << "  " << s.name << " eps=" << e << ": robust accuracy " << fmt(r.robust_accuracy) << '\n';
          }
        } else if (s.kind == "noisy") {
          const Dataset data = limited(test_set, s);
          std::ostringstream csv;
          csv << "eps,deterministic_acc,noisy_acc\n";
          const double sigma = arg_double(s, "sigma", 0.1);
          const auto draws = static_cast<std::size_t>(arg_int(s, "draws", 20));
          const bool in = parse_bool(arg(s, "input", "1"), s.name + ".input");
          const bool act = parse_bool(arg(s, "activation", "0"), s.name + ".activation");
          for (const std::string& e : arg_list(s, "eps", "1")) {
            const AttackConfig a = attack_for(s, parse_double(e, s.name + ".eps"), srng.derive("attack").seed());
            const Tensor adv = craft_adversarial(clf, data, a, attack_options(s));
            const double det = noisy_inference_eval(net, adv, data.labels, false, false, 0.0, 1, 0);
            const double noisy =
                noisy_inference_eval(net, adv, data.labels, in, act, sigma, draws, srng.derive("noise").seed());
            csv << e << ',' << fmt(det) << ',' << fmt(noisy) << '\n';
            log << "  " << s.name << " eps=" << e << ": deterministic " << fmt(det) << ", noisy " << fmt(noisy) << '\n';
          }
          write_text(out / (stem + ".csv"), csv.str());
        } else if (s.kind == "certify") {
          const Dataset data = limited(test_set, s);
          CertifyConfig c;
          c.sigma = arg_double(s, "sigma", 0.25);
          c.n_select = static_cast<std::size_t>(arg_int(s, "n0", 100));
          c.n_estimate = static_cast<std::size_t>(arg_int(s, "n", 1000));
          c.alpha = arg_double(s, "alpha", 0.001);
          c.seed = srng.derive("certify").seed();
          const std::vector<CertificationResult> res = certify_dataset(clf, data, c);
          write_certification_csv(res, data.labels, (out / (stem + ".csv")).string());
          std::vector<double> radii;
          for (const std::string& r : arg_list(s, "radii", "0,0.25,0.5,0.75,1")) radii.push_back(parse_double(r, "radii"));
          std::ostringstream csv;
          csv << "radius,certified_acc\n";
          for (const auto& [r, a] : certified_accuracy_curve(res, data.labels, radii)) csv << fmt(r) << ',' << fmt(a) << '\n';
          write_text(out / (stem + ".curve.csv"), csv.str());
        } else if (s.sub == "topo" || s.sub == "kernels") {
          const auto layer = static_cast<std::size_t>(arg_int(s, "layer", 0));
          const auto w = net.weight_of_layer(layer);
          if (!w) throw UsageError("layer " + std::to_string(layer) + " has no kernels");
          const Tensor& kernels = net.parameters()[*w].value;
          TopographyReport t;
          if (s.args.count("grid")) {
            const auto [r, c] = parse_grid(arg(s, "grid", ""), s.name + ".grid");
            t = kernel_topography(kernels, r, c);
          } else {
            t = topography_report(net, layer);
          }
          if (s.sub == "kernels") {
            write_kernel_sheet(kernels, t.rows, t.cols, (out / (stem + ".pgm")).string());
          } else {
            std::ostringstream csv;
            csv << "a,b,grid_distance,dissimilarity\n";
            for (const KernelPair& kp : t.pairwise)
              csv << kp.a << ',' << kp.b << ',' << fmt(kp.grid_distance) << ',' << fmt(kp.dissimilarity) << '\n';
            csv << "# spearman," << fmt(t.rank_correlation) << '\n';
            write_text(out / (stem + ".csv"), csv.str());
            log << "  " << s.name << ": spearman " << fmt(t.rank_correlation) << '\n';
          }
        } else if (s.sub == "smooth") {
          const double v = kernel_smoothness(net, static_cast<std::size_t>(arg_int(s, "layer", 0)));
          write_text(out / (stem + ".csv"), "smoothness\n" + fmt(v) + "\n");
        } else if (s.sub == "perturb") {
          const Dataset data = limited(test_set, s);
          const double eps = parse_double(arg_list(s, "eps", "1").front(), s.name + ".eps");
          const AttackConfig a = attack_for(s, eps, srng.derive("attack").seed());
          const PerturbationProfile prof =
              perturbation_profile(net, data.images, data.labels, a, arg_double(s, "sigma", 0.1),
                                   static_cast<std::size_t>(arg_int(s, "draws", 5)), srng.derive("analysis").seed());
          std::ostringstream csv;
          csv << "layer,gaussian_mean,gaussian_std,adversarial_mean,adversarial_std\n";
          for (const LayerPerturbation& l : prof.layers) {
            csv << l.layer << ',' << fmt(l.gaussian_mean) << ',' << fmt(l.gaussian_std) << ','
                << fmt(l.adversarial_mean) << ',' << fmt(l.adversarial_std) << '\n';
          }
          write_text(out / (stem + ".csv"), csv.str());
        } else if (s.sub == "gradprofile") {
          const GradientProfile g = gradient_difference_profile(
              static_cast<std::size_t>(arg_int(s, "nk", 32)), static_cast<std::size_t>(arg_int(s, "K", 3)),
              static_cast<std::uint64_t>(arg_int(s, "seed", 0)), static_cast<std::size_t>(arg_int(s, "dim", 8)));
          std::ostringstream csv;
          csv << "d,mean_norm,pairs\n";
          for (const GradientDifference& r : g.rows) csv << r.d << ',' << fmt(r.mean_norm) << ',' << r.pairs << '\n';
          write_text(out / (stem + ".csv"), csv.str());
        } else if (s.sub == "variance") {
          const VarianceCheck v = variance_reduction_check(
              static_cast<std::size_t>(arg_int(s, "K", 3)), arg_double(s, "sigma", 1.0),
              static_cast<std::size_t>(arg_int(s, "samples", 100000)), srng.derive("analysis").seed());
          write_text(out / (stem + ".csv"), "empirical,predicted\n" + fmt(v.empirical) + "," + fmt(v.predicted) + "\n");
        }
      } catch (const ConfigError& e) {
        throw ConfigError("step '" + s.name + "' (point '" + p.name + "'): " + e.what());
      } catch (const Error& e) {
        throw Error("step '" + s.name + "' (point '" + p.name + "'): " + e.what());
      }
    }

    std::ofstream sum(out / "summary.csv", std::ios::binary | std::ios::app);
    for (std::size_t i = 0; i < row.size(); ++i) sum << (i ? "," : "") << row[i];
    sum << '\n';
    trained.emplace(p.name, std::move(net));
  }
}

int run_manifest(const std::string& path, std::ostream& log, std::ostream& err, const std::string& output_dir_override) {
  try {
    execute_manifest(load_manifest(path), log, output_dir_override);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace kap
