#include "kap/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kap/error.hpp"
#include "kap/kap.hpp"
#include "kap/ops.hpp"

namespace kap {
namespace {

constexpr char kMagic[8] = {'K', 'A', 'P', 'N', 'E', 'T', '0', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError(path + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = (2.0 * rng.uniform() - 1.0) * bound;
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Network Network::build(NetworkSpec spec, std::uint64_t init_seed) {
  Network net;
  net.shapes_ = infer_shapes(spec);
  net.spec_ = std::move(spec);
  Rng root(init_seed);
  for (std::size_t i = 0; i < net.spec_.layers.size(); ++i) {
    const Shape& in = i == 0 ? net.spec_.input_shape : net.shapes_[i - 1];
    const LayerSpec& layer = net.spec_.layers[i];
    Rng rng = root.derive(static_cast<std::uint64_t>(i));
    const std::string prefix = "layer." + std::to_string(i);
    if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      net.layer_param_.push_back(static_cast<long>(net.params_.size()));
      const std::size_t fan_in = in[0] * c->kernel * c->kernel;
      net.params_.push_back({prefix + ".weight", he_uniform({c->out_channels, in[0], c->kernel, c->kernel}, fan_in, rng)});
      net.params_.push_back({prefix + ".bias", Tensor(Shape{c->out_channels}, 0.0)});
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      net.layer_param_.push_back(static_cast<long>(net.params_.size()));
      net.params_.push_back({prefix + ".weight", he_uniform({d->out_features, in[0]}, in[0], rng)});
      net.params_.push_back({prefix + ".bias", Tensor(Shape{d->out_features}, 0.0)});
    } else {
      net.layer_param_.push_back(-1);
    }
  }
  return net;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

std::optional<std::size_t> Network::weight_of_layer(std::size_t layer_index) const {
  if (layer_index >= layer_param_.size() || layer_param_[layer_index] < 0) return std::nullopt;
  return static_cast<std::size_t>(layer_param_[layer_index]);
}

ForwardResult Network::forward(Tape& tape, Var input, const ForwardOptions& options) const {
  const Shape& in = input.shape();
  if (in.size() != spec_.input_shape.size() + 1 ||
      !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), in.begin() + 1)) {
    throw DimensionError("network expects batches of " + shape_to_string(spec_.input_shape) + ", got " +
                         shape_to_string(in));
  }
  const bool noise_on = options.mode == Mode::train || options.activation_sigma.has_value();
  if (noise_on && options.rng == nullptr) {
    for (const LayerSpec& l : spec_.layers)
      if (std::holds_alternative<NoiseLayer>(l)) throw ContractError("noisy forward pass needs an Rng");
  }

  ForwardResult res;
  res.parameters.reserve(params_.size());
  for (const Parameter& p : params_) {
    res.parameters.push_back(options.parameter_grads ? tape.variable(p.value) : tape.constant(p.value));
  }

  Var x = input;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& layer = spec_.layers[i];
    const long pi = layer_param_[i];
    if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      x = conv2d(x, res.parameters[pi], res.parameters[pi + 1], c->stride, c->pad);
    } else if (std::holds_alternative<DenseLayer>(layer)) {
      x = linear(x, res.parameters[pi], res.parameters[pi + 1]);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      x = relu(x);
    } else if (const auto* k1 = std::get_if<Kap1dLayer>(&layer)) {
      x = kap1d(x, k1->kap, 1);
    } else if (const auto* k2 = std::get_if<Kap2dLayer>(&layer)) {
      x = kap2d(x, k2->kap, 1);
    } else if (const auto* km = std::get_if<KmpLayer>(&layer)) {
      x = kmp(x, km->kap, 1);
    } else if (const auto* n = std::get_if<NoiseLayer>(&layer)) {
      if (noise_on) {
        const double sigma = options.activation_sigma.value_or(n->sigma);
        x = gaussian_noise_add(x, sigma, *options.rng);
      }
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      x = flatten(x, 1);
    } else if (const auto* p = std::get_if<SpatialAvgPoolLayer>(&layer)) {
      x = spatial_avg_pool(x, p->window, p->stride);
    }
    res.activations.push_back(x);
  }
  res.logits = x;
  return res;
}

void Network::accumulate_gradients(const Tape& tape, const ForwardResult& result) {
  if (result.parameters.size() != params_.size()) throw ContractError("forward result does not match network");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& t = tape.value(result.parameters[i]);
    if (t.has_grad()) params_[i].value.accumulate_grad(t.grad());
  }
}

void Network::zero_grad() {
  for (Parameter& p : params_) p.value.zero_grad();
}

Tensor Network::logits(const Tensor& batch) const {
  Tape tape;
  const ForwardResult r = forward(tape, tape.constant(batch));
  return tape.value(r.logits);
}

std::vector<int> Network::predict(const Tensor& batch) const { return argmax_rows(logits(batch)); }

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected [N,C]");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits[r * c + j] > logits[r * c + best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const Tensor& t : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
  }
  for (const Tensor& t : ckpt.tensors)
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("failed writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8)) throw FormatError(path + ": empty or truncated checkpoint");
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": not a checkpoint (bad magic)");
  const std::uint32_t count = get_u32(in, path);
  std::vector<Shape> shapes(count);
  for (Shape& s : shapes) {
    const std::uint32_t rank = get_u32(in, path);
    if (rank > 8) throw FormatError(path + ": implausible tensor rank");
    for (std::uint32_t r = 0; r < rank; ++r) s.push_back(get_u64(in, path));
  }
  Checkpoint ckpt;
  for (Shape& s : shapes) {
    std::vector<double> data(shape_size(s));
    for (double& v : data) v = std::bit_cast<double>(get_u64(in, path));
    ckpt.tensors.emplace_back(std::move(s), std::move(data));
  }
  return ckpt;
}

void Network::save(const std::string& path) const {
  Checkpoint ckpt;
  for (const Parameter& p : params_) ckpt.tensors.push_back(p.value);
  write_checkpoint(ckpt, path);
}

void Network::load(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.tensors.size() != params_.size()) {
    throw FormatError(path + ": checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, network needs " +
                      std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (ckpt.tensors[i].shape() != params_[i].value.shape()) {
      throw FormatError(path + ": shape mismatch for " + params_[i].name);
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = std::move(ckpt.tensors[i]);
}

}  // namespace kap
