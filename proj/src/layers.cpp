#include "kap/layers.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "kap/config.hpp"
#include "kap/error.hpp"

namespace kap {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Shape parse_dims(const std::string& text, const std::string& what) {
  Shape dims;
  for (const std::string& part : split(text, 'x')) {
    const long long v = parse_int(part, what);
    if (v <= 0) throw ConfigError(what + ": dimensions must be positive");
    dims.push_back(static_cast<std::size_t>(v));
  }
  if (dims.empty()) throw ConfigError(what + ": empty shape");
  return dims;
}

std::string format_dims(const Shape& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

class Args {
 public:
  Args(const std::string& kind, std::map<std::string, std::string> kv) : kind_(kind), kv_(std::move(kv)) {}

  std::size_t size(const std::string& key, std::size_t fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const long long v = parse_int(it->second, kind_ + " " + key);
    if (v < 0) throw ConfigError(kind_ + ": " + key + " must be non-negative");
    used(key);
    return static_cast<std::size_t>(v);
  }
  double real(const std::string& key, double fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used(key);
    return parse_double(it->second, kind_ + " " + key);
  }
  bool flag(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return false;
    used(key);
    return it->second.empty() ? true : parse_bool(it->second, kind_ + " " + key);
  }
  std::optional<std::string> text(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    used(key);
    return it->second;
  }
  void finish() const {
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) throw ConfigError(kind_ + ": unknown argument '" + k + "'");
  }

 private:
  void used(const std::string& key) { used_[key] = true; }
  std::string kind_;
  std::map<std::string, std::string> kv_;
  std::map<std::string, bool> used_;
};

KapSpec parse_kap(Args& args, Arrangement arrangement) {
  KapSpec spec;
  spec.kernel_size = args.size("K", 3);
  spec.stride = args.size("S", 1);
  spec.arrangement = arrangement;
  spec.divide_by_k = args.flag("divide_by_k");
  if (auto grid = args.text("grid")) {
    if (arrangement == Arrangement::line) spec.arrangement = Arrangement::grid;  // kmp
    const Shape dims = parse_dims(*grid, "grid");
    if (dims.size() != 2) throw ConfigError("grid must be RxC");
    spec.grid_rows = dims[0];
    spec.grid_cols = dims[1];
  }
  if (spec.kernel_size == 0) throw ConfigError("K must be positive");
  if (spec.stride == 0 || spec.stride > spec.kernel_size) throw ConfigError("S must satisfy 1 <= S <= K");
  return spec;
}

std::string format_kap(const std::string& kind, const KapSpec& spec) { return kind + " " + to_string(spec); }

}  // namespace

std::string layer_kind(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const Conv2dLayer&) { return std::string("conv2d"); },
                        [](const DenseLayer&) { return std::string("dense"); },
                        [](const ReluLayer&) { return std::string("relu"); },
                        [](const Kap1dLayer&) { return std::string("kap1d"); },
                        [](const Kap2dLayer&) { return std::string("kap2d"); },
                        [](const KmpLayer&) { return std::string("kmp"); },
                        [](const NoiseLayer&) { return std::string("noise"); },
                        [](const FlattenLayer&) { return std::string("flatten"); },
                        [](const SpatialAvgPoolLayer&) { return std::string("spatial_avg_pool"); },
                    },
                    layer);
}

std::string format_layer(const LayerSpec& layer) {
  return std::visit(
      overloaded{
          [](const Conv2dLayer& c) {
            return "conv2d out=" + std::to_string(c.out_channels) + " k=" + std::to_string(c.kernel) +
                   " stride=" + std::to_string(c.stride) + " pad=" + std::to_string(c.pad);
          },
          [](const DenseLayer& d) { return "dense out=" + std::to_string(d.out_features); },
          [](const ReluLayer&) { return std::string("relu"); },
          [](const Kap1dLayer& k) { return format_kap("kap1d", k.kap); },
          [](const Kap2dLayer& k) { return format_kap("kap2d", k.kap); },
          [](const KmpLayer& k) { return format_kap("kmp", k.kap); },
          [](const NoiseLayer& n) {
            char buf[32];
            const auto res = std::to_chars(buf, buf + sizeof buf, n.sigma);
            return "noise sigma=" + std::string(buf, res.ptr);
          },
          [](const FlattenLayer&) { return std::string("flatten"); },
          [](const SpatialAvgPoolLayer& p) {
            if (p.window == 0) return std::string("spatial_avg_pool global");
            return "spatial_avg_pool size=" + std::to_string(p.window) + " stride=" + std::to_string(p.stride);
          },
      },
      layer);
}

LayerSpec parse_layer(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  if (kind.empty()) throw ConfigError("empty layer description");
  std::map<std::string, std::string> kv;
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) kv[tok] = "";
    else kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  Args args(kind, std::move(kv));
  LayerSpec out;
  if (kind == "conv2d") {
    Conv2dLayer c;
    c.out_channels = args.size("out", 0);
    c.kernel = args.size("k", 3);
    c.stride = args.size("stride", 1);
    c.pad = args.size("pad", c.kernel / 2);
    if (c.out_channels == 0) throw ConfigError("conv2d: out must be positive");
    out = c;
  } else if (kind == "dense") {
    DenseLayer d;
    d.out_features = args.size("out", 0);
    if (d.out_features == 0) throw ConfigError("dense: out must be positive");
    out = d;
  } else if (kind == "relu") {
    out = ReluLayer{};
  } else if (kind == "kap1d") {
    KapSpec k = parse_kap(args, Arrangement::line);
    if (k.arrangement != Arrangement::line) throw ConfigError("kap1d does not take a grid");
    out = Kap1dLayer{k};
  } else if (kind == "kap2d") {
    out = Kap2dLayer{parse_kap(args, Arrangement::grid)};
  } else if (kind == "kmp") {
    out = KmpLayer{parse_kap(args, Arrangement::line)};
  } else if (kind == "noise") {
    NoiseLayer n;
    n.sigma = args.real("sigma", 0.0);
    if (!(n.sigma >= 0.0)) throw ConfigError("noise: sigma must be >= 0");
    out = n;
  } else if (kind == "flatten") {
    out = FlattenLayer{};
  } else if (kind == "spatial_avg_pool") {
    SpatialAvgPoolLayer p;
    if (args.flag("global")) {
      p.window = 0;
      p.stride = 0;
    } else {
      p.window = args.size("size", 2);
      p.stride = args.size("stride", p.window);
      if (p.window == 0 || p.stride == 0) throw ConfigError("spatial_avg_pool: size and stride must be positive");
    }
    out = p;
  } else {
    throw ConfigError("unknown layer kind '" + kind + "'");
  }
  args.finish();
  return out;
}

NetworkSpec parse_network_spec(const std::string& text) {
  const FlatConfig cfg = FlatConfig::parse(text, "network spec");
  NetworkSpec spec;
  std::map<std::size_t, LayerSpec> layers;
  for (const auto& [key, value] : cfg.entries()) {
    if (key == "name") {
      spec.name = value;
    } else if (key == "input") {
      spec.input_shape = parse_dims(value, "input");
      if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3) throw ConfigError("input must be D or CxHxW");
    } else if (key == "classes") {
      const long long c = parse_int(value, "classes");
      if (c < 1) throw ConfigError("classes must be positive");
      spec.num_classes = static_cast<std::size_t>(c);
    } else if (key.rfind("layer.", 0) == 0) {
      const long long idx = parse_int(key.substr(6), key);
      if (idx < 0) throw ConfigError(key + ": negative layer index");
      try {
        layers[static_cast<std::size_t>(idx)] = parse_layer(value);
      } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
      }
    } else {
      throw ConfigError("network spec: unknown key '" + key + "'");
    }
  }
  if (spec.input_shape.empty()) throw ConfigError("network spec: missing 'input'");
  std::size_t expected = 0;
  for (auto& [idx, layer] : layers) {
    if (idx != expected) throw ConfigError("network spec: layer indices must be 0..n-1, missing layer." + std::to_string(expected));
    spec.layers.push_back(std::move(layer));
    ++expected;
  }
  return spec;
}

NetworkSpec load_network_spec(const std::string& path) { return parse_network_spec(read_text_file(path)); }

std::string format_network_spec(const NetworkSpec& spec) {
  std::ostringstream os;
  if (!spec.name.empty()) os << "name = " << spec.name << '\n';
  os << "input = " << format_dims(spec.input_shape) << '\n';
  os << "classes = " << spec.num_classes << '\n';
  for (std::size_t i = 0; i < spec.layers.size(); ++i) os << "layer." << i << " = " << format_layer(spec.layers[i]) << '\n';
  return os.str();
}

void save_network_spec(const NetworkSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << format_network_spec(spec);
}

std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3) {
    throw BuildError(0, "input must be [D] or [C,H,W]");
  }
  std::vector<Shape> shapes;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    auto need_rank = [&](std::size_t r) {
      if (cur.size() != r) {
        throw BuildError(i, layer_kind(layer) + " expects a rank-" + std::to_string(r) + " input, got " + shape_to_string(cur));
      }
    };
    try {
      std::visit(overloaded{
                     [&](const Conv2dLayer& c) {
                       need_rank(3);
                       if (c.kernel % 2 == 0 || c.stride == 0) throw BuildError(i, "conv2d needs odd k and positive stride");
                       const std::size_t ph = cur[1] + 2 * c.pad, pw = cur[2] + 2 * c.pad;
                       if (ph < c.kernel || pw < c.kernel || (ph - c.kernel) % c.stride || (pw - c.kernel) % c.stride) {
                         throw BuildError(i, "conv2d output size is not integral for " + shape_to_string(cur));
                       }
                       cur = {c.out_channels, (ph - c.kernel) / c.stride + 1, (pw - c.kernel) / c.stride + 1};
                     },
                     [&](const DenseLayer& d) {
                       need_rank(1);
                       cur = {d.out_features};
                     },
                     [&](const ReluLayer&) {},
                     [&](const NoiseLayer&) {},
                     [&](const Kap1dLayer& k) { cur[0] = kap_output_channels(k.kap, cur[0]); },
                     [&](const Kap2dLayer& k) { cur[0] = kap_output_channels(k.kap, cur[0]); },
                     [&](const KmpLayer& k) { cur[0] = kap_output_channels(k.kap, cur[0]); },
                     [&](const FlattenLayer&) { cur = {shape_size(cur)}; },
                     [&](const SpatialAvgPoolLayer& p) {
                       need_rank(3);
                       if (p.window == 0) {
                         cur = {cur[0], 1, 1};
                         return;
                       }
                       if (p.window > cur[1] || p.window > cur[2] || (cur[1] - p.window) % p.stride ||
                           (cur[2] - p.window) % p.stride) {
                         throw BuildError(i, "spatial_avg_pool window does not tile " + shape_to_string(cur));
                       }
                       cur = {cur[0], (cur[1] - p.window) / p.stride + 1, (cur[2] - p.window) / p.stride + 1};
                     },
                 },
                 layer);
    } catch (const BuildError&) {
      throw;
    } catch (const Error& e) {
      throw BuildError(i, e.what());
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != spec.num_classes) {
    throw BuildError(spec.layers.empty() ? 0 : spec.layers.size() - 1,
                     "network must end in " + std::to_string(spec.num_classes) + " logits, got " + shape_to_string(cur));
  }
  return shapes;
}

std::size_t count_parameters(const NetworkSpec& spec) {
  const std::vector<Shape> shapes = infer_shapes(spec);
  std::size_t total = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Shape& in = i == 0 ? spec.input_shape : shapes[i - 1];
    if (const auto* c = std::get_if<Conv2dLayer>(&spec.layers[i])) {
      total += c->out_channels * in[0] * c->kernel * c->kernel + c->out_channels;
    } else if (const auto* d = std::get_if<DenseLayer>(&spec.layers[i])) {
      total += d->out_features * in[0] + d->out_features;
    }
  }
  return total;
}

}  // namespace kap
