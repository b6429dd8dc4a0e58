#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "kap/config.hpp"
#include "kap/layers.hpp"
#include "kap/train.hpp"

namespace kap {

/// A sweep point: one network trained once, then passed through every step.
struct ManifestPoint {
  std::string name;
  std::string spec_path;
  NetworkSpec spec;
  FlatConfig train_overrides;  // `point.<name>.train.*` with the prefix removed
};

struct ManifestStep {
  std::string name;
  std::string kind;                          // attack, certify, noisy, transfer, analyze
  std::string sub;                           // analyze: topo|smooth|kernels|perturb|gradprofile|variance
  std::map<std::string, std::string> args;  // key=value arguments after the kind
};

/// Flat `key = value` experiment description:
///
///   name = depth
///   seed = 1
///   output_dir = out
///   train_data = synthetic:gratings:n=800:side=16:seed=1
///   test_data = synthetic:gratings:n=300:side=16:seed=2
///   train.epochs = 15
///   point.kap3.spec = nets/kap3.txt
///   point.kap3.train.sigma = 0.1
///   step.pgd = attack norm=l2 eps=0.5,1 steps=10
///
/// Relative paths resolve against the manifest's directory. Points and steps
/// run in file order.
struct Manifest {
  std::string path;
  std::string base_dir;
  std::string name;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string train_data;
  std::string test_data;
  std::string data_shape;  // CxHxW for CSV data
  FlatConfig train;
  std::vector<ManifestPoint> points;
  std::vector<ManifestStep> steps;
};

/// Parses and checks a manifest: files exist, specs compose, step kinds and
/// arguments are known, names are unique. Throws ConfigError naming the
/// offending entry.
Manifest load_manifest(const std::string& path);

/// Trains every point and runs every step, writing
///   <point>.ckpt, <point>.train.csv, <point>.<step>[...].csv|pgm
/// and summary.csv (point, clean_acc, one robust accuracy column per attack
/// step and epsilon) into the output directory. Progress goes to `log`.
/// Errors propagate with the step and point named; earlier outputs stay.
void execute_manifest(const Manifest& manifest, std::ostream& log, const std::string& output_dir_override = "");

/// Exit status: 0 on success, 2 for configuration problems, 3 for failures
/// while running. Diagnostics go to `err`.
int run_manifest(const std::string& path, std::ostream& log, std::ostream& err,
                 const std::string& output_dir_override = "");

}  // namespace kap
