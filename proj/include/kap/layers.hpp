#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "kap/kap.hpp"
#include "kap/tensor.hpp"

namespace kap {

struct Conv2dLayer {
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool operator==(const Conv2dLayer&) const = default;
};

struct DenseLayer {
  std::size_t out_features = 1;
  bool operator==(const DenseLayer&) const = default;
};

struct ReluLayer {
  bool operator==(const ReluLayer&) const = default;
};

struct Kap1dLayer {
  KapSpec kap;
  bool operator==(const Kap1dLayer&) const = default;
};

struct Kap2dLayer {
  KapSpec kap;
  bool operator==(const Kap2dLayer&) const = default;
};

struct KmpLayer {
  KapSpec kap;
  bool operator==(const KmpLayer&) const = default;
};

/// Additive Gaussian noise; active in train mode only.
struct NoiseLayer {
  double sigma = 0.0;
  bool operator==(const NoiseLayer&) const = default;
};

struct FlattenLayer {
  bool operator==(const FlattenLayer&) const = default;
};

/// window == 0 pools the whole spatial extent.
struct SpatialAvgPoolLayer {
  std::size_t window = 0;
  std::size_t stride = 0;
  bool operator==(const SpatialAvgPoolLayer&) const = default;
};

using LayerSpec = std::variant<Conv2dLayer, DenseLayer, ReluLayer, Kap1dLayer, Kap2dLayer, KmpLayer, NoiseLayer,
                               FlattenLayer, SpatialAvgPoolLayer>;

struct NetworkSpec {
  std::string name;
  Shape input_shape;  // per sample: [C,H,W] or [D]
  std::size_t num_classes = 2;
  std::vector<LayerSpec> layers;

  bool operator==(const NetworkSpec&) const = default;
};

std::string layer_kind(const LayerSpec& layer);
std::string format_layer(const LayerSpec& layer);
LayerSpec parse_layer(const std::string& text);

/// Flat keyed text: `input = 1x16x16`, `classes = 4`, `layer.<i> = <layer>`.
NetworkSpec parse_network_spec(const std::string& text);
NetworkSpec load_network_spec(const std::string& path);
std::string format_network_spec(const NetworkSpec& spec);
void save_network_spec(const NetworkSpec& spec, const std::string& path);

/// Per-sample output shape of every layer; throws BuildError naming the first
/// layer that does not compose.
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

/// Weight count implied by the spec (conv: o*i*k*k + o, dense: o*i + o).
std::size_t count_parameters(const NetworkSpec& spec);

}  // namespace kap
