#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kap/tensor.hpp"

namespace kap {

/// Images [N,C,H,W] (or flat [N,D]) in [0,1] with integer labels in [0, num_classes).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  std::size_t sample_size() const;

  /// Images of the given rows stacked into a batch.
  Tensor batch(std::span<const std::size_t> rows) const;
  std::vector<int> batch_labels(std::span<const std::size_t> rows) const;
  Dataset subset(std::span<const std::size_t> rows) const;
  Dataset head(std::size_t n) const;

  /// Checks pixel range, label range and shape agreement.
  void validate() const;
};

Dataset make_dataset(Tensor images, std::vector<int> labels, std::size_t num_classes = 0);

/// IDX (MNIST-style) files: images magic 0x00000803, labels 0x00000801.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path);

/// One row per sample: label, then channels*height*width pixel bytes.
Dataset load_csv(const std::string& path, std::size_t width, std::size_t height, std::size_t channels);
void save_csv(const Dataset& data, const std::string& path);

/// Two classes of soft Gaussian blobs: class 0 centred in the upper-left
/// quadrant, class 1 in the lower-right, with pixel noise.
Dataset make_blobs(std::size_t n, std::size_t side, std::uint64_t seed);

/// Oriented gratings at `classes` evenly spaced orientations with random
/// phase, frequency jitter, contrast and pixel noise.
Dataset make_gratings(std::size_t n, std::size_t side, std::size_t classes, std::uint64_t seed, double contrast = 0.5,
                      double pixel_noise = 0.1);

/// Resolves a data reference: `synthetic:<kind>:n=..:side=..:seed=..[:classes=..]`,
/// a `.csv` file (needs `csv_shape` CxHxW), or an IDX images path whose labels
/// sit at `labels_path` or next to it with `images` replaced by `labels`.
Dataset load_dataset(const std::string& ref, const std::string& labels_path = "", const std::string& csv_shape = "");

}  // namespace kap
