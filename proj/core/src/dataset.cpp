#include "adaperceiver/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "adaperceiver/rng.hpp"

namespace adaperceiver {

namespace {

uint32_t read_be32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("unexpected end of file in " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

struct RawIdx {
  int rows = 0, cols = 0;
  std::vector<uint8_t> images;  // n * rows * cols
  std::vector<uint8_t> labels;  // n
};

RawIdx load_idx_pair(const std::string& images_path, const std::string& labels_path) {
  constexpr uint32_t kImagesMagic = 0x00000803;  // u8, 3 dimensions
  constexpr uint32_t kLabelsMagic = 0x00000801;  // u8, 1 dimension

  std::ifstream imgf(images_path, std::ios::binary);
  if (!imgf) throw IoError("cannot open " + images_path);
  const uint32_t imagic = read_be32(imgf, images_path);
  if (imagic != kImagesMagic) {
    throw BadMagicNumber("images magic " + std::to_string(imagic) + " in " + images_path);
  }
  const uint32_t n = read_be32(imgf, images_path);
  const uint32_t rows = read_be32(imgf, images_path);
  const uint32_t cols = read_be32(imgf, images_path);

  std::ifstream labf(labels_path, std::ios::binary);
  if (!labf) throw IoError("cannot open " + labels_path);
  const uint32_t lmagic = read_be32(labf, labels_path);
  if (lmagic != kLabelsMagic) {
    throw BadMagicNumber("labels magic " + std::to_string(lmagic) + " in " + labels_path);
  }
  const uint32_t nl = read_be32(labf, labels_path);
  if (n != nl) {
    throw CountMismatch("image count " + std::to_string(n) + " vs label count " +
                        std::to_string(nl));
  }

  RawIdx raw;
  raw.rows = static_cast<int>(rows);
  raw.cols = static_cast<int>(cols);
  raw.images.resize(size_t(n) * rows * cols);
  imgf.read(reinterpret_cast<char*>(raw.images.data()), static_cast<std::streamsize>(raw.images.size()));
  if (!imgf) throw IoError("truncated image data in " + images_path);
  raw.labels.resize(n);
  labf.read(reinterpret_cast<char*>(raw.labels.data()), static_cast<std::streamsize>(raw.labels.size()));
  if (!labf) throw IoError("truncated label data in " + labels_path);
  return raw;
}

// Per-class template: an oriented grating with class-specific frequency,
// orientation and phase (seeded jitter keeps different dataset seeds from
// producing the same patterns). Classes are near-orthogonal, so the task is
// learnable at desk scale; per-sample noise carries the difficulty.
std::vector<float> class_template(int cls, int side, uint64_t seed) {
  Rng rng(seed ^ (0x51ed2701u + 7919u * static_cast<uint64_t>(cls)));
  const double pi = 3.14159265358979323846;
  const double freq = 2.0 + (cls % 5) + 0.3 * rng.uniform();
  const double theta = pi * (static_cast<double>(cls) / 10.0 + 0.05 * rng.uniform());
  const double phase = 2.0 * pi * rng.uniform();
  const double ct = std::cos(theta), st = std::sin(theta);
  std::vector<float> out(static_cast<size_t>(side) * side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double u = (x * ct + y * st) / side;
      const double v = 0.5 + 0.38 * std::cos(2.0 * pi * freq * u + phase);
      out[static_cast<size_t>(y) * side + x] = static_cast<float>(v);
    }
  }
  return out;
}

Dataset synth_generate(const DatasetSpec& spec, Rng& rng, int count) {
  Dataset d;
  d.image_size = spec.image_size;
  d.channels = 1;
  d.classes = spec.classes;
  const int side = spec.image_size;
  const Index numel = static_cast<Index>(side) * side;
  d.images.resize(static_cast<size_t>(count) * numel);
  d.labels.resize(static_cast<size_t>(count));
  d.difficulty.resize(static_cast<size_t>(count));

  std::vector<std::vector<float>> templates;
  for (int c = 0; c < spec.classes; ++c) templates.push_back(class_template(c, side, spec.seed));

  const double span = spec.noise_max - spec.noise_min;
  for (int i = 0; i < count; ++i) {
    const int cls = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.classes)));
    const double sigma = spec.noise_min + rng.uniform() * span;
    const float difficulty = static_cast<float>(span > 0 ? (sigma - spec.noise_min) / span : 0.0);
    float* img = d.images.data() + static_cast<size_t>(i) * numel;
    const auto& tpl = templates[static_cast<size_t>(cls)];
    for (Index p = 0; p < numel; ++p) {
      double v = tpl[static_cast<size_t>(p)] + sigma * rng.normal();
      img[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    // visible difficulty cue: 3x3 corner patch carries the noise level
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) img[y * side + x] = difficulty;
    d.labels[static_cast<size_t>(i)] = cls;
    d.difficulty[static_cast<size_t>(i)] = difficulty;
  }
  // normalize
  for (auto& v : d.images) v = static_cast<float>((v - spec.mean) / spec.stddev);
  return d;
}

}  // namespace

DataSplits ingest_dataset(const DatasetSpec& spec) {
  DataSplits splits;
  if (spec.name == "synthetic") {
    Rng rng(spec.seed);
    // one stream: train, then val, then test
    splits.train = synth_generate(spec, rng, spec.train_count);
    splits.val = synth_generate(spec, rng, spec.val_count);
    splits.test = synth_generate(spec, rng, spec.test_count);
    return splits;
  }
  if (spec.name == "idx") {
    auto raw = load_idx_pair(spec.images_path, spec.labels_path);
    const Index n = static_cast<Index>(raw.labels.size());
    const Index want = spec.train_count + spec.val_count + spec.test_count;
    if (want > n) {
      throw CountMismatch("requested " + std::to_string(want) + " samples, file has " +
                          std::to_string(n));
    }
    Rng rng(spec.seed);
    auto perm = rng.permutation(n);
    int max_label = 0;
    for (uint8_t l : raw.labels) max_label = std::max(max_label, static_cast<int>(l));

    const Index numel = static_cast<Index>(raw.rows) * raw.cols;
    auto take = [&](Index start, Index count) {
      Dataset d;
      d.image_size = raw.rows;
      d.channels = 1;
      d.classes = max_label + 1;
      d.images.resize(static_cast<size_t>(count) * numel);
      d.labels.resize(static_cast<size_t>(count));
      for (Index i = 0; i < count; ++i) {
        const Index src = perm[static_cast<size_t>(start + i)];
        const uint8_t* s = raw.images.data() + src * numel;
        float* dst = d.images.data() + i * numel;
        for (Index p = 0; p < numel; ++p) {
          dst[p] = static_cast<float>((s[p] / 255.0 - spec.mean) / spec.stddev);
        }
        d.labels[static_cast<size_t>(i)] = raw.labels[static_cast<size_t>(src)];
      }
      return d;
    };
    splits.train = take(0, spec.train_count);
    splits.val = take(spec.train_count, spec.val_count);
    splits.test = take(spec.train_count + spec.val_count, spec.test_count);
    return splits;
  }
  throw UnknownDataset("dataset name '" + spec.name + "' (expected synthetic or idx)");
}

template <typename S>
TensorT<S> batch_images(const Dataset& data, std::span<const int64_t> indices) {
  const Index b = static_cast<Index>(indices.size());
  const Index numel = data.image_numel();
  std::vector<S> out(static_cast<size_t>(b * numel));
  for (Index i = 0; i < b; ++i) {
    const float* src = data.images.data() + indices[static_cast<size_t>(i)] * numel;
    S* dst = out.data() + i * numel;
    for (Index p = 0; p < numel; ++p) dst[p] = static_cast<S>(src[p]);
  }
  return TensorT<S>::from(
      {b, static_cast<Index>(data.channels), static_cast<Index>(data.image_size),
       static_cast<Index>(data.image_size)},
      std::move(out));
}

std::vector<int> batch_labels(const Dataset& data, std::span<const int64_t> indices) {
  std::vector<int> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    out[i] = data.labels[static_cast<size_t>(indices[i])];
  }
  return out;
}

template TensorT<float> batch_images<float>(const Dataset&, std::span<const int64_t>);
template TensorT<double> batch_images<double>(const Dataset&, std::span<const int64_t>);

}  // namespace adaperceiver
