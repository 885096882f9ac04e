#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/types.h>

namespace toap {

/// One image with its identity label. Pixels are stored channel-first,
/// [3, H, W] float32 in [0, 1]; H and W are multiples of 16.
struct ImageSample {
  torch::Tensor pixels;
  int identity = 0;
};

struct DatasetSplits {
  std::vector<ImageSample> train;
  std::vector<ImageSample> test;
  std::vector<ImageSample> database;
  int identities = 0;
  std::uint64_t seed = 0;
};

/// Reads `root/<identity>/<image>` (png, jpg, bmp, ...). Identities are
/// numbered by sorted directory name; files within an identity are sorted
/// too. Identities with fewer than `min_images` images are skipped before
/// numbering; an empty identity directory is an error regardless.
std::vector<ImageSample> load_dataset(const std::filesystem::path& root, int image_size,
                                      int min_images = 1);

/// Per identity: a seeded shuffle, then `train_per_id` to train, `test_per_id`
/// to test, the remainder to the database.
DatasetSplits make_splits(std::span<const ImageSample> samples, int train_per_id, int test_per_id,
                          std::uint64_t seed);

/// Colored-blob identities: each identity has its own blob hue, background,
/// and blob position; every image adds brightness jitter, a small position
/// jitter and Gaussian pixel noise.
std::vector<ImageSample> generate_synthetic(int identities, int per_id, int image_size,
                                            std::uint64_t seed);

/// [N, 3, H, W]
torch::Tensor stack_pixels(std::span<const ImageSample> samples);
std::vector<int> labels_of(std::span<const ImageSample> samples);
int count_identities(std::span<const ImageSample> samples);

}  // namespace toap
