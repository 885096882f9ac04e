#include "toap/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

#include "toap/image_io.hpp"

namespace toap {
namespace {

void check_image_size(int image_size) {
  if (image_size <= 0 || image_size % 16 != 0) {
    throw std::invalid_argument("image_size must be a positive multiple of 16, got " +
                                std::to_string(image_size));
  }
}

bool is_image_file(const std::filesystem::path& p) {
  static const std::set<std::string> kExt = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm",
                                             ".tif", ".tiff", ".webp"};
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return kExt.count(ext) > 0;
}

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(i) % 6) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

}  // namespace

std::vector<ImageSample> load_dataset(const std::filesystem::path& root, int image_size, int min_images) {
  check_image_size(image_size);
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::invalid_argument("dataset root is not a directory: " + root.string());

  std::vector<fs::path> identity_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) identity_dirs.push_back(entry.path());
  }
  std::sort(identity_dirs.begin(), identity_dirs.end());
  if (identity_dirs.empty()) throw std::invalid_argument("dataset root has no identity directories: " + root.string());

  std::vector<ImageSample> samples;
  int label = 0;
  for (const auto& dir : identity_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    if (files.empty()) throw std::invalid_argument("identity directory has no images: " + dir.string());
    if (static_cast<int>(files.size()) < min_images) continue;
    std::sort(files.begin(), files.end());
    for (const auto& f : files) samples.push_back({read_image(f, image_size), label});
    ++label;
  }
  if (samples.empty()) {
    throw std::invalid_argument("no identity in " + root.string() + " has at least " +
                                std::to_string(min_images) + " images");
  }
  return samples;
}

DatasetSplits make_splits(std::span<const ImageSample> samples, int train_per_id, int test_per_id,
                          std::uint64_t seed) {
  if (train_per_id < 1 || test_per_id < 1) {
    throw std::invalid_argument("train_per_id and test_per_id must be >= 1");
  }
  std::map<int, std::vector<std::size_t>> by_identity;
  for (std::size_t i = 0; i < samples.size(); ++i) by_identity[samples[i].identity].push_back(i);

  DatasetSplits splits;
  splits.seed = seed;
  splits.identities = static_cast<int>(by_identity.size());
  for (auto& [id, indices] : by_identity) {
    const auto need = static_cast<std::size_t>(train_per_id + test_per_id);
    if (indices.size() <= need) {
      throw std::invalid_argument("identity " + std::to_string(id) + " has " + std::to_string(indices.size()) +
                                  " images; needs more than " + std::to_string(need) + " (train " +
                                  std::to_string(train_per_id) + " + test " + std::to_string(test_per_id) + ")");
    }
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(id));
    std::shuffle(indices.begin(), indices.end(), rng);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto& s = samples[indices[k]];
      if (k < static_cast<std::size_t>(train_per_id)) {
        splits.train.push_back(s);
      } else if (k < need) {
        splits.test.push_back(s);
      } else {
        splits.database.push_back(s);
      }
    }
  }
  return splits;
}

std::vector<ImageSample> generate_synthetic(int identities, int per_id, int image_size, std::uint64_t seed) {
  if (identities < 2) throw std::invalid_argument("synthetic data needs at least 2 identities");
  if (per_id < 3) throw std::invalid_argument("synthetic data needs at least 3 images per identity");
  check_image_size(image_size);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<float> noise(0.0f, 0.03f);

  const double s = image_size;
  const auto coords = (torch::arange(image_size, torch::kFloat64) + 0.5);
  const auto yy = coords.view({image_size, 1});
  const auto xx = coords.view({1, image_size});

  std::vector<ImageSample> out;
  out.reserve(static_cast<std::size_t>(identities) * per_id);
  for (int p = 0; p < identities; ++p) {
    const double hue = static_cast<double>(p) / identities;
    const auto blob = hsv_to_rgb(hue, 0.6, 0.8);
    const auto background = hsv_to_rgb(hue + 0.5, 0.2, 0.45);
    // Blob centers are spread over a permuted grid so neighbouring hues sit apart.
    const double cx = s * (0.3 + 0.4 * static_cast<double>((p * 3) % identities) / identities);
    const double cy = s * (0.3 + 0.4 * static_cast<double>((p * 7) % identities) / identities);

    for (int i = 0; i < per_id; ++i) {
      const double jx = 3.0 * unit(rng);
      const double jy = 3.0 * unit(rng);
      const double brightness = 1.0 + 0.1 * unit(rng);
      const double radius = s * 0.22 * (1.0 + 0.1 * unit(rng));
      const auto dist = torch::sqrt((xx - cx - jx).pow(2) + (yy - cy - jy).pow(2));
      const auto mask = torch::sigmoid((radius - dist) / 1.5).to(torch::kFloat32);

      auto img = torch::empty({3, image_size, image_size});
      for (int c = 0; c < 3; ++c) {
        img[c] = (mask * blob[c] + (1 - mask) * background[c]) * static_cast<float>(brightness);
      }
      auto n = torch::empty({3, image_size, image_size});
      float* np = n.data_ptr<float>();
      for (int64_t k = 0; k < n.numel(); ++k) np[k] = noise(rng);
      out.push_back({(img + n).clamp(0.0, 1.0).contiguous(), p});
    }
  }
  return out;
}

torch::Tensor stack_pixels(std::span<const ImageSample> samples) {
  if (samples.empty()) throw std::invalid_argument("cannot stack an empty sample list");
  std::vector<torch::Tensor> xs;
  xs.reserve(samples.size());
  for (const auto& s : samples) xs.push_back(s.pixels);
  return torch::stack(xs);
}

std::vector<int> labels_of(std::span<const ImageSample> samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.identity);
  return labels;
}

int count_identities(std::span<const ImageSample> samples) {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.identity);
  return static_cast<int>(ids.size());
}

}  // namespace toap
