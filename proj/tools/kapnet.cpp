// kapnet: train, attack, certify and analyse kernel-average-pooling networks.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kap/analysis.hpp"
#include "kap/attacks.hpp"
#include "kap/certify.hpp"
#include "kap/classifier.hpp"
#include "kap/config.hpp"
#include "kap/dataset.hpp"
#include "kap/error.hpp"
#include "kap/manifest.hpp"
#include "kap/network.hpp"
#include "kap/train.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

struct DataArgs {
  std::string data, labels, shape;
  std::size_t limit = 0;

  void add(CLI::App* app, bool required = true) {
    auto* o = app->add_option("--data", data, "IDX images, CSV file or synthetic:<kind>:n=..:side=..:seed=..");
    if (required) o->required();
    app->add_option("--labels", labels, "IDX labels (default: images path with 'images' -> 'labels')");
    app->add_option("--data-shape", shape, "CxHxW for CSV data");
    app->add_option("--limit", limit, "Use only the first N samples (0 = all)");
  }
  kap::Dataset load() const {
    kap::Dataset d = kap::load_dataset(data, labels, shape);
    return limit > 0 ? d.head(limit) : d;
  }
};

struct NetArgs {
  std::string spec, ckpt;

  void add(CLI::App* app, bool ckpt_required = true) {
    app->add_option("--spec", spec, "Network spec file")->required();
    auto* o = app->add_option("--ckpt", ckpt, "Checkpoint");
    if (ckpt_required) o->required();
  }
  kap::Network load() const {
    kap::Network net = kap::Network::build(kap::load_network_spec(spec), 0);
    if (!ckpt.empty()) net.load(ckpt);
    return net;
  }
};

struct AttackArgs {
  std::string norm = "l2", eps = "1.0", kind = "pgd";
  double step = 0.0, step_frac = 0.25;
  std::size_t steps = 100, restarts = 1, probes = 100;
  bool random_start = false;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--norm", norm, "l2 or linf")->capture_default_str();
    app->add_option("--eps", eps, "Budget, or a comma-separated sweep")->capture_default_str();
    app->add_option("--step", step, "Absolute step size (default: step-frac * eps)");
    app->add_option("--step-frac", step_frac, "Step size as a fraction of eps")->capture_default_str();
    app->add_option("--steps", steps, "PGD iterations")->capture_default_str();
    app->add_option("--restarts", restarts, "PGD restarts")->capture_default_str();
    app->add_flag("--random-start", random_start, "Start each restart at a random point of the ball");
    app->add_option("--kind", kind, "pgd, fgsm or probe")->capture_default_str();
    app->add_option("--probes", probes, "Random probes per sample (kind=probe)")->capture_default_str();
    app->add_option("--seed", seed, "Attack seed")->capture_default_str();
  }
  std::vector<double> epsilons() const {
    std::vector<double> out;
    for (const std::string& e : kap::split(eps, ','))
      if (!e.empty()) out.push_back(kap::parse_double(e, "--eps"));
    if (out.empty()) throw kap::UsageError("--eps needs at least one value");
    return out;
  }
  kap::AttackConfig config(double e) const {
    kap::AttackConfig a;
    a.norm = kap::parse_norm(norm);
    a.epsilon = e;
    a.step_size = step > 0.0 ? step : (e > 0.0 ? step_frac * e : 1.0);
    a.iterations = steps;
    a.restarts = restarts;
    a.random_start = random_start;
    a.seed = seed;
    return a;
  }
  kap::AttackOptions options() const {
    kap::AttackOptions o;
    if (kind == "pgd") o.kind = kap::AttackKind::pgd;
    else if (kind == "fgsm") o.kind = kap::AttackKind::fgsm;
    else if (kind == "probe") o.kind = kap::AttackKind::random_probe;
    else throw kap::UsageError("unknown --kind '" + kind + "'");
    o.n_probes = probes;
    return o;
  }
};

std::string with_suffix(const std::string& path, const std::string& suffix) {
  const std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw kap::IoError("cannot write " + path);
  out << std::setprecision(10);
  return out;
}

// Values from --config files become `--key=value` arguments placed before the
// user's own, so explicit flags win.
std::vector<std::string> config_arguments(const CLI::App* sub, const std::string& path) {
  const kap::FlatConfig cfg = kap::FlatConfig::load(path);
  std::vector<std::string> out;
  for (const auto& [k, v] : cfg.entries()) {
    std::string key = k;
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config" || sub->get_option_no_throw("--" + key) == nullptr) {
      throw kap::ConfigError(path + ": unknown key '" + k + "' for " + sub->get_name());
    }
    out.push_back("--" + key + "=" + v);
  }
  return out;
}

int run(std::vector<std::string> args, bool configured);

int dispatch(std::vector<std::string> args, bool configured) {
  CLI::App app{"Kernel average pooling networks: training, attacks, certification and analysis", "kapnet"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print the version");
  std::string config_path;

  // train
  auto* tr = app.add_subcommand("train", "Train a network");
  NetArgs tr_net;
  tr->add_option("--spec", tr_net.spec, "Network spec file")->required();
  DataArgs tr_data;
  tr_data.add(tr);
  std::string tr_out, tr_report;
  kap::TrainConfig tc;
  std::uint64_t init_seed = 0;
  std::string adversarial = "none";
  kap::AttackConfig adv;
  std::string adv_norm = "l2";
  tr->add_option("--config", config_path, "Flat key = value file of option defaults");
  tr->add_option("--out", tr_out, "Checkpoint to write")->required();
  tr->add_option("--report", tr_report, "CSV: epoch,train_loss,clean_acc");
  tr->add_option("--epochs", tc.epochs)->capture_default_str();
  tr->add_option("--batch-size", tc.batch_size)->capture_default_str();
  tr->add_option("--lr", tc.lr)->capture_default_str();
  tr->add_option("--momentum", tc.momentum)->capture_default_str();
  tr->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
  tr->add_option("--sigma", tc.input_noise_sigma, "Input noise")->capture_default_str();
  tr->add_option("--seed", tc.seed, "Shuffling and noise seed")->capture_default_str();
  tr->add_option("--init-seed", init_seed, "Weight initialisation seed")->capture_default_str();
  tr->add_option("--adversarial", adversarial, "none or pgd")->capture_default_str();
  tr->add_option("--adv-norm", adv_norm)->capture_default_str();
  tr->add_option("--adv-eps", adv.epsilon)->capture_default_str();
  tr->add_option("--adv-step", adv.step_size)->capture_default_str();
  tr->add_option("--adv-steps", adv.iterations)->capture_default_str();
  tr->add_option("--patience", tc.patience)->capture_default_str();

  // attack
  auto* at = app.add_subcommand("attack", "Adversarial evaluation of a checkpoint");
  NetArgs at_net;
  at_net.add(at);
  DataArgs at_data;
  at_data.add(at);
  AttackArgs at_args;
  at_args.add(at);
  std::string at_out, at_source_spec, at_source_ckpt;
  double noisy_sigma = 0.0;
  std::size_t noisy_draws = 20;
  bool noisy_input = false, noisy_activation = false;
  at->add_option("--config", config_path, "Flat key = value file of option defaults");
  at->add_option("--out", at_out, "CSV: idx,label,clean_pred,adv_pred,pert_norm");
  at->add_option("--source-spec", at_source_spec, "Craft examples on this network instead (transfer)");
  at->add_option("--source-ckpt", at_source_ckpt, "Checkpoint of the transfer source");
  at->add_option("--noisy-sigma", noisy_sigma, "Also score the examples with noisy inference at this sigma");
  at->add_option("--noisy-draws", noisy_draws, "Votes per sample for noisy inference")->capture_default_str();
  at->add_flag("--noisy-input", noisy_input, "Noisy inference adds input noise");
  at->add_flag("--noisy-activation", noisy_activation, "Noisy inference enables the network's noise layers");

  // certify
  auto* ce = app.add_subcommand("certify", "Randomized-smoothing certification");
  NetArgs ce_net;
  ce_net.add(ce);
  DataArgs ce_data;
  ce_data.add(ce);
  kap::CertifyConfig cc;
  std::string ce_out, ce_curve, ce_radii = "0,0.25,0.5,0.75,1";
  ce->add_option("--config", config_path, "Flat key = value file of option defaults");
  ce->add_option("--sigma", cc.sigma)->capture_default_str();
  ce->add_option("--n0", cc.n_select, "Selection draws")->capture_default_str();
  ce->add_option("--n", cc.n_estimate, "Estimation draws")->capture_default_str();
  ce->add_option("--alpha", cc.alpha)->capture_default_str();
  ce->add_option("--seed", cc.seed)->capture_default_str();
  ce->add_option("--out", ce_out, "CSV: idx,label,pred,radius,abstain");
  ce->add_option("--curve", ce_curve, "CSV: radius,certified_acc");
  ce->add_option("--radii", ce_radii, "Radii for the curve")->capture_default_str();

  // analyze
  auto* an = app.add_subcommand("analyze", "Structural analyses");
  an->require_subcommand(1);
  std::string an_out, an_grid;
  std::size_t an_layer = 0;
  NetArgs an_net;
  DataArgs an_data;

  auto* topo = an->add_subcommand("topo", "Grid distance vs kernel dissimilarity");
  topo->add_option("--config", config_path, "Flat key = value file of option defaults");
  an_net.add(topo);
  topo->add_option("--layer", an_layer)->capture_default_str();
  topo->add_option("--grid", an_grid, "RxC sheet when the layer has no grid KAP");
  topo->add_option("--out", an_out, "CSV of kernel pairs");

  auto* smooth = an->add_subcommand("smooth", "Adjacent-weight smoothness");
  NetArgs sm_net;
  smooth->add_option("--config", config_path, "Flat key = value file of option defaults");
  sm_net.add(smooth);
  smooth->add_option("--layer", an_layer)->capture_default_str();
  smooth->add_option("--out", an_out);

  auto* kern = an->add_subcommand("kernels", "Write the kernel sheet as PGM");
  NetArgs ke_net;
  kern->add_option("--config", config_path, "Flat key = value file of option defaults");
  ke_net.add(kern);
  kern->add_option("--layer", an_layer)->capture_default_str();
  kern->add_option("--grid", an_grid, "RxC sheet when the layer has no grid KAP");
  kern->add_option("--out", an_out, "PGM path")->required();

  std::size_t gp_nk = 32, gp_k = 3, gp_dim = 8;
  std::uint64_t an_seed = 0;
  auto* gp = an->add_subcommand("gradprofile", "Gradient differences in a one-hidden-layer KAP net");
  gp->add_option("--config", config_path, "Flat key = value file of option defaults");
  gp->add_option("--nk", gp_nk, "Hidden units")->capture_default_str();
  gp->add_option("--K", gp_k, "KAP kernel size")->capture_default_str();
  gp->add_option("--dim", gp_dim, "Input dimension")->capture_default_str();
  gp->add_option("--seed", an_seed)->capture_default_str();
  gp->add_option("--out", an_out);

  double var_sigma = 1.0;
  std::size_t var_samples = 100000;
  auto* va = an->add_subcommand("variance", "Variance of one KAP window on i.i.d. Gaussian input");
  va->add_option("--config", config_path, "Flat key = value file of option defaults");
  va->add_option("--K", gp_k)->capture_default_str();
  va->add_option("--sigma", var_sigma)->capture_default_str();
  va->add_option("--samples", var_samples)->capture_default_str();
  va->add_option("--seed", an_seed)->capture_default_str();
  va->add_option("--out", an_out);

  auto* pe = an->add_subcommand("perturb", "Per-layer activation change under noise and attack");
  NetArgs pe_net;
  AttackArgs pe_attack;
  double pe_sigma = 0.1;
  std::size_t pe_draws = 5;
  pe->add_option("--config", config_path, "Flat key = value file of option defaults");
  pe_net.add(pe);
  an_data.add(pe);
  pe_attack.add(pe);
  pe->add_option("--sigma", pe_sigma)->capture_default_str();
  pe->add_option("--draws", pe_draws)->capture_default_str();
  pe->add_option("--out", an_out);

  // run / validate / info / version
  auto* ru = app.add_subcommand("run", "Execute an experiment manifest");
  std::string manifest, out_dir;
  ru->add_option("manifest", manifest)->required();
  ru->add_option("--out-dir", out_dir, "Override the manifest's output directory");
  auto* vl = app.add_subcommand("validate", "Check an experiment manifest");
  vl->add_option("manifest", manifest)->required();
  auto* in = app.add_subcommand("info", "Describe a network spec and checkpoint");
  NetArgs in_net;
  in_net.add(in, false);
  app.add_subcommand("version", "Print the version");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (show_version) {
      std::cout << "kapnet " << kVersion << '\n';
      return 0;
    }
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (!config_path.empty() && !configured) {
    const CLI::App* sub = app.get_subcommands().front();
    std::size_t at_pos = std::find(args.begin() + 1, args.end(), sub->get_name()) - args.begin();
    if (!sub->get_subcommands().empty()) {
      sub = sub->get_subcommands().front();
      at_pos = std::find(args.begin() + static_cast<std::ptrdiff_t>(at_pos), args.end(), sub->get_name()) - args.begin();
    }
    const std::vector<std::string> extra = config_arguments(sub, config_path);
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at_pos) + 1, extra.begin(), extra.end());
    return run(args, true);
  }

  if (app.got_subcommand("version")) {
    std::cout << "kapnet " << kVersion << '\n';
    return 0;
  }

  if (tr->parsed()) {
    kap::Network net = kap::Network::build(kap::load_network_spec(tr_net.spec), init_seed);
    const kap::Dataset data = tr_data.load();
    if (adversarial == "pgd") {
      adv.norm = kap::parse_norm(adv_norm);
      adv.seed = tc.seed;
      tc.adversarial = adv;
    } else if (adversarial != "none") {
      throw kap::UsageError("--adversarial must be none or pgd");
    }
    const kap::TrainReport rep = kap::train(net, data, tc);
    net.save(tr_out);
    if (!tr_report.empty()) kap::write_train_report_csv(rep, tr_report);
    std::cout << "trained " << rep.curve.size() << " epochs; clean accuracy " << rep.final_clean_accuracy << '\n';
    return 0;
  }

  if (at->parsed()) {
    const kap::Network net = at_net.load();
    const kap::Dataset data = at_data.load();
    const kap::NetworkClassifier target(net);
    std::optional<kap::Network> source_net;
    if (!at_source_spec.empty()) {
      source_net = kap::Network::build(kap::load_network_spec(at_source_spec), 0);
      if (!at_source_ckpt.empty()) source_net->load(at_source_ckpt);
    } else if (!at_source_ckpt.empty()) {
      throw kap::UsageError("--source-ckpt needs --source-spec");
    }
    const kap::NetworkClassifier source(source_net ? *source_net : net);
    const std::vector<double> eps = at_args.epsilons();
    std::cout << "eps,clean_acc,robust_acc" << (noisy_sigma > 0.0 ? ",noisy_acc" : "") << '\n';
    for (double e : eps) {
      const kap::AttackConfig cfg = at_args.config(e);
      const kap::RobustnessReport rep = kap::transfer_attack(source, target, data, cfg, at_args.options());
      std::cout << e << ',' << rep.clean_accuracy << ',' << rep.robust_accuracy;
      if (noisy_sigma > 0.0) {
        const kap::Tensor adv_x = kap::craft_adversarial(source, data, cfg, at_args.options());
        std::cout << ','
                  << kap::noisy_inference_eval(net, adv_x, data.labels, noisy_input, noisy_activation, noisy_sigma,
                                               noisy_draws, at_args.seed);
      }
      std::cout << '\n';
      if (!at_out.empty()) {
        kap::write_robustness_csv(rep, eps.size() == 1 ? at_out : with_suffix(at_out, ".eps" + std::to_string(e)));
      }
    }
    return 0;
  }

  if (ce->parsed()) {
    const kap::Network net = ce_net.load();
    const kap::Dataset data = ce_data.load();
    const std::vector<kap::CertificationResult> res = kap::certify_dataset(kap::NetworkClassifier(net), data, cc);
    if (!ce_out.empty()) kap::write_certification_csv(res, data.labels, ce_out);
    std::vector<double> radii;
    for (const std::string& r : kap::split(ce_radii, ','))
      if (!r.empty()) radii.push_back(kap::parse_double(r, "--radii"));
    const auto curve = kap::certified_accuracy_curve(res, data.labels, radii);
    std::ostringstream csv;
    csv << std::setprecision(10) << "radius,certified_acc\n";
    for (const auto& [r, a] : curve) csv << r << ',' << a << '\n';
    if (!ce_curve.empty()) open_out(ce_curve) << csv.str();
    std::cout << csv.str();
    return 0;
  }

  if (an->parsed()) {
    std::ostringstream csv;
    csv << std::setprecision(10);
    auto grid_of = [&](const kap::Network& net, const kap::Tensor& kernels) {
      if (an_grid.empty()) return kap::topography_report(net, an_layer);
      const std::vector<std::string> rc = kap::split(an_grid, 'x');
      if (rc.size() != 2) throw kap::UsageError("--grid must be RxC");
      return kap::kernel_topography(kernels, static_cast<std::size_t>(kap::parse_int(rc[0], "--grid")),
                                    static_cast<std::size_t>(kap::parse_int(rc[1], "--grid")));
    };
    auto kernels_of = [&](const kap::Network& net) -> const kap::Tensor& {
      const auto w = net.weight_of_layer(an_layer);
      if (!w) throw kap::UsageError("layer " + std::to_string(an_layer) + " has no kernels");
      return net.parameters()[*w].value;
    };
    if (topo->parsed()) {
      const kap::Network net = an_net.load();
      const kap::TopographyReport t = grid_of(net, kernels_of(net));
      csv << "a,b,grid_distance,dissimilarity\n";
      for (const kap::KernelPair& p : t.pairwise) csv << p.a << ',' << p.b << ',' << p.grid_distance << ',' << p.dissimilarity << '\n';
      std::cout << "spearman " << t.rank_correlation << '\n';
    } else if (smooth->parsed()) {
      const double v = kap::kernel_smoothness(sm_net.load(), an_layer);
      csv << "smoothness\n" << v << '\n';
      std::cout << csv.str();
    } else if (kern->parsed()) {
      const kap::Network net = ke_net.load();
      const kap::Tensor& k = kernels_of(net);
      const kap::TopographyReport t = grid_of(net, k);
      kap::write_kernel_sheet(k, t.rows, t.cols, an_out);
      return 0;
    } else if (gp->parsed()) {
      const kap::GradientProfile g = kap::gradient_difference_profile(gp_nk, gp_k, an_seed, gp_dim);
      csv << "d,mean_norm,pairs\n";
      for (const kap::GradientDifference& r : g.rows) csv << r.d << ',' << r.mean_norm << ',' << r.pairs << '\n';
      std::cout << csv.str() << "max autodiff error " << g.max_autodiff_error << '\n';
    } else if (va->parsed()) {
      const kap::VarianceCheck v = kap::variance_reduction_check(gp_k, var_sigma, var_samples, an_seed);
      csv << "empirical,predicted\n" << v.empirical << ',' << v.predicted << '\n';
      std::cout << csv.str();
    } else if (pe->parsed()) {
      const kap::Network net = pe_net.load();
      const kap::Dataset data = an_data.load();
      const kap::PerturbationProfile prof = kap::perturbation_profile(
          net, data.images, data.labels, pe_attack.config(pe_attack.epsilons().front()), pe_sigma, pe_draws, pe_attack.seed);
      csv << "layer,gaussian_mean,gaussian_std,adversarial_mean,adversarial_std\n";
      for (const kap::LayerPerturbation& l : prof.layers) {
        csv << l.layer << ',' << l.gaussian_mean << ',' << l.gaussian_std << ',' << l.adversarial_mean << ','
            << l.adversarial_std << '\n';
      }
      std::cout << csv.str();
    }
    if (!an_out.empty()) open_out(an_out) << csv.str();
    return 0;
  }

  if (ru->parsed()) return kap::run_manifest(manifest, std::cout, std::cerr, out_dir);

  if (vl->parsed()) {
    const kap::Manifest m = kap::load_manifest(manifest);
    std::cout << "ok: " << m.name << " (" << m.points.size() << " points, " << m.steps.size() << " steps)\n";
    return 0;
  }

  if (in->parsed()) {
    const kap::NetworkSpec spec = kap::load_network_spec(in_net.spec);
    const kap::Network net = in_net.load();
    std::cout << "name " << spec.name << "\ninput " << kap::shape_to_string(spec.input_shape) << '\n';
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      std::cout << "layer." << i << " = " << kap::format_layer(spec.layers[i]) << "  -> "
                << kap::shape_to_string(net.layer_shapes()[i]) << '\n';
    }
    std::cout << "parameters " << net.parameter_count() << '\n';
    return 0;
  }
  return 1;
}

int run(std::vector<std::string> args, bool configured) {
  try {
    return dispatch(args, configured);
  } catch (const kap::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const kap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const kap::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const kap::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  } catch (const kap::BuildError& e) {
    std::cerr << "build error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc), false); }
