#pragma once

#include <filesystem>
#include <span>

#include <torch/types.h>

namespace toap {

/// Decodes an image file and resizes it (bilinear) to size x size.
/// Returns [3, size, size] float32 RGB in [0, 1].
torch::Tensor read_image(const std::filesystem::path& path, int size);

/// Writes a [3, H, W] tensor in [0, 1] as an 8-bit RGB PNG (atomically).
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Tiles `rows` (each [N, 3, H, W], equal shapes) into one [3, rows*H, N*W]
/// image with a 2-pixel white gutter.
torch::Tensor tile_rows(std::span<const torch::Tensor> rows);

}  // namespace toap
