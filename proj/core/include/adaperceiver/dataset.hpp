#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adaperceiver/tensor.hpp"

namespace adaperceiver {

// Dataset source: the bundled synthetic generator or an IDX image/label pair
// (the MNIST container format). Pixels are scaled to [0,1] and normalized as
// (x - mean) / stddev.
struct DatasetSpec {
  std::string name = "synthetic";  // "synthetic" | "idx"
  std::string images_path;
  std::string labels_path;

  int train_count = 8000;
  int val_count = 1000;
  int test_count = 2000;
  uint64_t seed = 1234;

  double mean = 0.5;
  double stddev = 0.5;

  // synthetic generator knobs: 10 classes of oriented gratings, per-sample
  // noise level sigma ~ U[noise_min, noise_max]; sigma is visibly stamped
  // into the top-left corner patch so difficulty is observable from pixels.
  int classes = 10;
  int image_size = 28;
  double noise_min = 0.15;
  double noise_max = 0.95;
};

struct Dataset {
  int image_size = 0;
  int channels = 1;
  int classes = 0;
  std::vector<float> images;  // [n, C, H, W] row-major, normalized
  std::vector<int> labels;
  std::vector<float> difficulty;  // synthetic only: noise level in [0,1]

  Index count() const { return static_cast<Index>(labels.size()); }
  Index image_numel() const {
    return static_cast<Index>(channels) * image_size * image_size;
  }
};

struct DataSplits {
  Dataset train, val, test;
};

// Deterministic at fixed spec.seed. Throws UnknownDataset, BadMagicNumber,
// CountMismatch, IoError.
DataSplits ingest_dataset(const DatasetSpec& spec);

// Assemble an image batch tensor [B, C, H, W] from dataset rows.
template <typename S>
TensorT<S> batch_images(const Dataset& data, std::span<const int64_t> indices);

std::vector<int> batch_labels(const Dataset& data, std::span<const int64_t> indices);

extern template TensorT<float> batch_images<float>(const Dataset&, std::span<const int64_t>);
extern template TensorT<double> batch_images<double>(const Dataset&, std::span<const int64_t>);

}  // namespace adaperceiver
