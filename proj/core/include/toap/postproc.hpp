#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <torch/types.h>

namespace toap {

// Images here are [B, 3, H, W] tensors in [0, 1] (float32 or float64).

struct JpegOp {
  int quality = 60;
};
struct ResizeOp {
  double ratio = 1.5;
};
struct BlurOp {
  int kernel_size = 3;
  double sigma = 0.8;
};
struct RotateOp {
  double degrees = 10.0;
};
struct NoiseOp {
  double sigma = 0.04472;
  std::uint64_t seed = 0;
};

using PostProcOp = std::variant<JpegOp, ResizeOp, BlurOp, RotateOp, NoiseOp>;

/// Grammar (case-sensitive, ':'-separated):
///   jpeg:<quality 1..100>
///   resize:<ratio > 0>
///   blur:<odd kernel size >= 1>:<sigma > 0>
///   rotate:<degrees>
///   noise:<sigma >= 0>[:<seed>]
PostProcOp parse_op(std::string_view text);
std::string to_string(const PostProcOp& op);
/// "jpeg", "resize", ...
std::string kind_of(const PostProcOp& op);
std::vector<PostProcOp> default_ops();

torch::Tensor apply_op(const PostProcOp& op, const torch::Tensor& images);

/// Standard JPEG luminance/chrominance tables scaled by the IJG quality rule, [8, 8].
torch::Tensor quantization_table(int quality, bool chroma);

struct JpegOptions {
  bool hard = true;
  /// 4:2:0 chroma subsampling (H, W must then be multiples of 16).
  bool chroma_subsampling = false;
};

/// Differentiable JPEG: RGB -> YCbCr (full range), level shift, 8x8 block DCT,
/// quantization with either exact rounding (hard) or the cubic surrogate
/// round(v) + (v - round(v))^3, dequantization and the inverse chain, clipped to [0, 1].
torch::Tensor diff_jpeg(const torch::Tensor& images, int quality, JpegOptions options = {});

/// Quantized DCT coefficients before rounding (4:4:4), [B, 3, H/8, W/8, 8, 8] for Y, Cb, Cr.
torch::Tensor jpeg_quantized_coefficients(const torch::Tensor& images, int quality);

/// Bilinear resize to (round(ratio*H), round(ratio*W)) and back to (H, W).
torch::Tensor resize_roundtrip(const torch::Tensor& images, double ratio);

/// Depthwise convolution with a normalized Gaussian kernel, reflect padding.
torch::Tensor gaussian_blur(const torch::Tensor& images, int kernel_size, double sigma);
/// Normalized [k, k] Gaussian kernel.
torch::Tensor gaussian_kernel(int kernel_size, double sigma, torch::Dtype dtype = torch::kFloat32);

/// Rotation about the image center, bilinear sampling, zero fill.
torch::Tensor rotate(const torch::Tensor& images, double degrees);

/// images + N(0, sigma^2), clipped to [0, 1]; seeded.
torch::Tensor add_gaussian_noise(const torch::Tensor& images, double sigma, std::uint64_t seed);

}  // namespace toap
