#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

#include "toap/postproc.hpp"

namespace toap {
namespace {

namespace F = torch::nn::functional;

// ITU-T T.81 Annex K tables, row-major (not zigzag).
constexpr std::array<int, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaTable = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// Full-range (JFIF) YCbCr on the 0..255 scale. The level shift centers the
// dynamic range at zero (127.5), so mid-gray 0.5 has all-zero coefficients.
constexpr double kLevelShift = 127.5;

torch::Tensor dct_matrix(torch::Dtype dtype) {
  auto d = torch::empty({8, 8}, torch::kFloat64);
  auto a = d.accessor<double, 2>();
  for (int u = 0; u < 8; ++u) {
    const double scale = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int x = 0; x < 8; ++x) a[u][x] = scale * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
  }
  return d.to(dtype);
}

void check_quality(int quality) {
  if (quality < 1 || quality > 100) {
    throw std::invalid_argument("JPEG quality must be in [1, 100], got " + std::to_string(quality));
  }
}

void check_dims(const torch::Tensor& images, int multiple) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw std::invalid_argument("diff_jpeg expects [B, 3, H, W] images, got " + c10::str(images.sizes()));
  }
  if (images.size(2) % multiple != 0 || images.size(3) % multiple != 0) {
    throw std::invalid_argument("diff_jpeg needs H and W to be multiples of " + std::to_string(multiple) +
                                ", got " + std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)));
  }
}

// [B, 3, H, W] in [0, 1] -> level-shifted Y, Cb, Cr planes on the 0..255 scale.
torch::Tensor rgb_to_ycc(const torch::Tensor& images) {
  auto v = images * 255.0;
  auto r = v.select(1, 0), g = v.select(1, 1), b = v.select(1, 2);
  auto y = 0.299 * r + 0.587 * g + 0.114 * b - kLevelShift;
  auto cb = -0.168736 * r - 0.331264 * g + 0.5 * b;
  auto cr = 0.5 * r - 0.418688 * g - 0.081312 * b;
  return torch::stack({y, cb, cr}, 1);
}

torch::Tensor ycc_to_rgb(const torch::Tensor& ycc) {
  auto y = ycc.select(1, 0) + kLevelShift, cb = ycc.select(1, 1), cr = ycc.select(1, 2);
  auto r = y + 1.402 * cr;
  auto g = y - 0.344136 * cb - 0.714136 * cr;
  auto b = y + 1.772 * cb;
  return torch::stack({r, g, b}, 1) / 255.0;
}

// [B, C, H, W] -> [B, C, H/8, W/8, 8, 8]
torch::Tensor to_blocks(const torch::Tensor& planes) {
  const auto b = planes.size(0), c = planes.size(1), h = planes.size(2), w = planes.size(3);
  return planes.reshape({b, c, h / 8, 8, w / 8, 8}).permute({0, 1, 2, 4, 3, 5});
}

torch::Tensor from_blocks(const torch::Tensor& blocks) {
  const auto b = blocks.size(0), c = blocks.size(1), bh = blocks.size(2), bw = blocks.size(3);
  return blocks.permute({0, 1, 2, 4, 3, 5}).reshape({b, c, bh * 8, bw * 8});
}

torch::Tensor round_coefficients(const torch::Tensor& v, bool hard) {
  auto r = torch::round(v);
  if (hard) return r;
  return r + (v - r).pow(3);
}

// Compress-decompress a stack of planes sharing one table.
torch::Tensor code_planes(const torch::Tensor& planes, const torch::Tensor& table, bool hard) {
  const auto d = dct_matrix(planes.scalar_type());
  const auto q = table.to(planes.scalar_type());
  auto coeffs = torch::matmul(torch::matmul(d, to_blocks(planes)), d.t());
  auto quantized = round_coefficients(coeffs / q, hard) * q;
  return from_blocks(torch::matmul(torch::matmul(d.t(), quantized), d));
}

}  // namespace

torch::Tensor quantization_table(int quality, bool chroma) {
  check_quality(quality);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const auto& base = chroma ? kChromaTable : kLumaTable;
  auto t = torch::empty({8, 8}, torch::kFloat32);
  auto a = t.accessor<float, 2>();
  for (int i = 0; i < 64; ++i) {
    const int v = (base[i] * scale + 50) / 100;
    a[i / 8][i % 8] = static_cast<float>(std::clamp(v, 1, 255));
  }
  return t;
}

torch::Tensor diff_jpeg(const torch::Tensor& images, int quality, JpegOptions options) {
  check_quality(quality);
  check_dims(images, options.chroma_subsampling ? 16 : 8);
  const auto luma_q = quantization_table(quality, false);
  const auto chroma_q = quantization_table(quality, true);
  const auto ycc = rgb_to_ycc(images);

  torch::Tensor out;
  if (!options.chroma_subsampling) {
    const auto table = torch::stack({luma_q, chroma_q, chroma_q}).view({1, 3, 1, 1, 8, 8});
    out = code_planes(ycc, table, options.hard);
  } else {
    auto y = code_planes(ycc.slice(1, 0, 1), luma_q, options.hard);
    auto chroma = F::avg_pool2d(ycc.slice(1, 1, 3), F::AvgPool2dFuncOptions(2));
    chroma = code_planes(chroma, chroma_q, options.hard);
    chroma = chroma.repeat_interleave(2, 2).repeat_interleave(2, 3);
    out = torch::cat({y, chroma}, 1);
  }
  return ycc_to_rgb(out).clamp(0.0, 1.0);
}

torch::Tensor jpeg_quantized_coefficients(const torch::Tensor& images, int quality) {
  check_quality(quality);
  check_dims(images, 8);
  const auto table =
      torch::stack({quantization_table(quality, false), quantization_table(quality, true),
                    quantization_table(quality, true)})
          .view({1, 3, 1, 1, 8, 8})
          .to(images.scalar_type());
  const auto d = dct_matrix(images.scalar_type());
  return torch::matmul(torch::matmul(d, to_blocks(rgb_to_ycc(images))), d.t()) / table;
}

}  // namespace toap
