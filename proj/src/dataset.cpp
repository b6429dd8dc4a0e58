#include "kap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "kap/config.hpp"
#include "kap/error.hpp"
#include "kap/rng.hpp"

namespace kap {
namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError(path + ": truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  if (in.peek() == std::char_traits<char>::eof()) throw FormatError(path + ": empty file");
  return in;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Shape Dataset::sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

std::size_t Dataset::sample_size() const { return images.size() / std::max<std::size_t>(1, images.dim(0)); }

Tensor Dataset::batch(std::span<const std::size_t> rows) const {
  const std::size_t per = sample_size();
  std::vector<double> data(rows.size() * per);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw DimensionError("dataset row out of range");
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * per), per,
                data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  Shape shape = images.shape();
  shape[0] = rows.size();
  return Tensor::from_unchecked(std::move(shape), std::move(data));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels.at(r));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw DimensionError("empty dataset subset");
  Dataset d;
  d.images = batch(rows);
  d.labels = batch_labels(rows);
  d.num_classes = num_classes;
  return d;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> rows(std::min(n, size()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return subset(rows);
}

void Dataset::validate() const {
  if (images.rank() != 4 && images.rank() != 2) throw FormatError("dataset images must be [N,C,H,W] or [N,D]");
  if (images.dim(0) != labels.size()) {
    throw FormatError("dataset has " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                      " labels");
  }
  for (double v : images.data())
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("dataset pixel outside [0,1]");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw FormatError("dataset label out of range");
}

Dataset make_dataset(Tensor images, std::vector<int> labels, std::size_t num_classes) {
  Dataset d;
  d.images = std::move(images);
  d.labels = std::move(labels);
  if (num_classes == 0) {
    int mx = -1;
    for (int y : d.labels) mx = std::max(mx, y);
    num_classes = static_cast<std::size_t>(mx + 1);
  }
  d.num_classes = num_classes;
  d.validate();
  return d;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img = open_binary(images_path);
  if (read_be32(img, images_path) != 0x00000803) throw FormatError(images_path + ": bad IDX image magic");
  const std::uint32_t n = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images_path + ": zero IDX dimension");

  std::ifstream lab = open_binary(labels_path);
  if (read_be32(lab, labels_path) != 0x00000801) throw FormatError(labels_path + ": bad IDX label magic");
  const std::uint32_t nl = read_be32(lab, labels_path);
  if (nl != n) {
    throw FormatError("IDX image count " + std::to_string(n) + " does not match label count " + std::to_string(nl));
  }

  const std::size_t total = std::size_t{n} * rows * cols;
  std::vector<unsigned char> bytes(total);
  if (!img.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total))) {
    throw IoError(images_path + ": truncated IDX image data");
  }
  std::vector<unsigned char> lbytes(n);
  if (!lab.read(reinterpret_cast<char*>(lbytes.data()), n)) throw IoError(labels_path + ": truncated IDX label data");

  std::vector<double> pixels(total);
  for (std::size_t i = 0; i < total; ++i) pixels[i] = bytes[i] / 255.0;
  std::vector<int> labels(lbytes.begin(), lbytes.end());
  return make_dataset(Tensor({n, 1, rows, cols}, std::move(pixels)), std::move(labels));
}

void save_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path) {
  if (data.images.rank() != 4 || data.images.dim(1) != 1) throw FormatError("IDX images hold a single channel");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IoError("cannot write IDX files " + images_path + ", " + labels_path);
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(data.images.dim(2)));
  write_be32(img, static_cast<std::uint32_t>(data.images.dim(3)));
  for (double v : data.images.data()) img.put(static_cast<char>(to_byte(v)));
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) lab.put(static_cast<char>(y));
}

Dataset load_csv(const std::string& path, std::size_t width, std::size_t height, std::size_t channels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  const std::size_t per = width * height * channels;
  if (per == 0) throw ParameterError("load_csv: zero image size");
  std::vector<double> pixels;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cols = split(trim(line), ',');
    if (cols.size() != per + 1) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(per + 1) + " columns, got " +
                        std::to_string(cols.size()));
    }
    try {
      const long long y = parse_int(cols[0], "label");
      if (y < 0) throw FormatError(path + ":" + std::to_string(lineno) + ": negative label");
      labels.push_back(static_cast<int>(y));
      for (std::size_t i = 1; i < cols.size(); ++i) {
        const double v = parse_double(cols[i], "pixel");
        if (v < 0.0 || v > 255.0) throw FormatError(path + ":" + std::to_string(lineno) + ": pixel outside 0..255");
        pixels.push_back(v / 255.0);
      }
    } catch (const ConfigError& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (labels.empty()) throw FormatError(path + ": no samples");
  Tensor images({labels.size(), channels, height, width}, std::move(pixels));
  return make_dataset(std::move(images), std::move(labels));
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const std::size_t per = data.sample_size();
  for (std::size_t r = 0; r < data.size(); ++r) {
    out << data.labels[r];
    for (std::size_t i = 0; i < per; ++i) out << ',' << static_cast<int>(to_byte(data.images[r * per + i]));
    out << '\n';
  }
}

Dataset make_blobs(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> pixels(n * side * side);
  std::vector<int> labels(n);
  const double s = static_cast<double>(side);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    labels[i] = y;
    const double base = y == 0 ? 0.25 : 0.75;
    const double cy = s * (base + 0.15 * (rng.uniform() - 0.5));
    const double cx = s * (base + 0.15 * (rng.uniform() - 0.5));
    const double width = s * (0.12 + 0.04 * rng.uniform());
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px) {
        const double dy = static_cast<double>(py) - cy, dx = static_cast<double>(px) - cx;
        const double v = 0.1 + 0.8 * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width)) + 0.05 * rng.normal();
        pixels[(i * side + py) * side + px] = clamp01(v);
      }
  }
  return make_dataset(Tensor({n, 1, side, side}, std::move(pixels)), std::move(labels), 2);
}

Dataset make_gratings(std::size_t n, std::size_t side, std::size_t classes, std::uint64_t seed, double contrast,
                      double pixel_noise) {
  if (classes < 2) throw ParameterError("make_gratings: need at least two classes");
  Rng rng(seed);
  std::vector<double> pixels(n * side * side);
  std::vector<int> labels(n);
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % classes);
    labels[i] = y;
    const double theta = pi * static_cast<double>(y) / static_cast<double>(classes) + 0.15 * (rng.uniform() - 0.5);
    const double freq = 0.16 + 0.08 * rng.uniform();  // cycles per pixel
    const double phase = 2.0 * pi * rng.uniform();
    const double amp = 0.5 * contrast * (0.6 + 0.4 * rng.uniform());
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px) {
        const double u = ct * static_cast<double>(px) + st * static_cast<double>(py);
        const double v = 0.5 + amp * std::sin(2.0 * pi * freq * u + phase) + pixel_noise * rng.normal();
        pixels[(i * side + py) * side + px] = clamp01(v);
      }
  }
  return make_dataset(Tensor({n, 1, side, side}, std::move(pixels)), std::move(labels), classes);
}

Dataset load_dataset(const std::string& ref, const std::string& labels_path, const std::string& csv_shape) {
  if (ref.rfind("synthetic:", 0) == 0) {
    const std::vector<std::string> parts = split(ref.substr(10), ':');
    if (parts.empty()) throw ConfigError("synthetic data reference needs a kind");
    std::map<std::string, std::string> kv;
    for (std::size_t i = 1; i < parts.size(); ++i) {
      const auto eq = parts[i].find('=');
      if (eq == std::string::npos) throw ConfigError("synthetic data option '" + parts[i] + "' is not key=value");
      kv[parts[i].substr(0, eq)] = parts[i].substr(eq + 1);
    }
    auto get = [&](const std::string& k, const std::string& d) { return kv.count(k) ? kv[k] : d; };
    const auto n = static_cast<std::size_t>(parse_int(get("n", "512"), "n"));
    const auto side = static_cast<std::size_t>(parse_int(get("side", "16"), "side"));
    const auto seed = static_cast<std::uint64_t>(parse_int(get("seed", "0"), "seed"));
    if (parts[0] == "blobs") return make_blobs(n, side, seed);
    if (parts[0] == "gratings") {
      return make_gratings(n, side, static_cast<std::size_t>(parse_int(get("classes", "4"), "classes")), seed,
                           parse_double(get("contrast", "0.5"), "contrast"), parse_double(get("noise", "0.1"), "noise"));
    }
    throw ConfigError("unknown synthetic dataset '" + parts[0] + "'");
  }
  if (ref.size() > 4 && ref.compare(ref.size() - 4, 4, ".csv") == 0) {
    if (csv_shape.empty()) throw ConfigError("CSV data needs an image shape CxHxW");
    const std::vector<std::string> dims = split(csv_shape, 'x');
    if (dims.size() != 3) throw ConfigError("CSV image shape must be CxHxW");
    return load_csv(ref, static_cast<std::size_t>(parse_int(dims[2], "width")),
                    static_cast<std::size_t>(parse_int(dims[1], "height")),
                    static_cast<std::size_t>(parse_int(dims[0], "channels")));
  }
  std::string labels = labels_path;
  if (labels.empty()) {
    const auto pos = ref.rfind("images");
    if (pos == std::string::npos) throw ConfigError("cannot infer IDX labels path for " + ref + "; pass it explicitly");
    labels = ref;
    labels.replace(pos, 6, "labels");
  }
  std::ifstream probe(ref);
  if (!probe) throw ConfigError("data file not found: " + ref);
  return load_idx(ref, labels);
}

}  // namespace kap
