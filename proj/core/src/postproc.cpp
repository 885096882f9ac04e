#include "toap/postproc.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

namespace toap {
namespace {

namespace F = torch::nn::functional;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

double parse_number(const std::string& s, std::string_view context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("bad number '" + s + "' in post-processing op '" + std::string(context) + "'");
}

int parse_int(const std::string& s, std::string_view context) {
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("bad integer '" + s + "' in post-processing op '" + std::string(context) + "'");
  }
  return v;
}

std::string format_number(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

void validate(const PostProcOp& op) {
  std::visit(Overloaded{
                 [](const JpegOp& o) {
                   if (o.quality < 1 || o.quality > 100) throw std::invalid_argument("jpeg quality must be in [1, 100]");
                 },
                 [](const ResizeOp& o) {
                   if (!(o.ratio > 0)) throw std::invalid_argument("resize ratio must be > 0");
                 },
                 [](const BlurOp& o) {
                   if (o.kernel_size < 1 || o.kernel_size % 2 == 0) {
                     throw std::invalid_argument("blur kernel size must be odd and >= 1");
                   }
                   if (!(o.sigma > 0)) throw std::invalid_argument("blur sigma must be > 0");
                 },
                 [](const RotateOp&) {},
                 [](const NoiseOp& o) {
                   if (!(o.sigma >= 0)) throw std::invalid_argument("noise sigma must be >= 0");
                 },
             },
             op);
}

void check_batch(const torch::Tensor& images, const char* op) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw std::invalid_argument(std::string(op) + " expects [B, 3, H, W] images, got " + c10::str(images.sizes()));
  }
}

torch::Tensor bilinear(const torch::Tensor& images, int64_t h, int64_t w) {
  return F::interpolate(images, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{h, w})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

}  // namespace

PostProcOp parse_op(std::string_view text) {
  const auto parts = split(text, ':');
  const auto& kind = parts[0];
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() - 1 < lo || parts.size() - 1 > hi) {
      throw std::invalid_argument("wrong number of parameters in post-processing op '" + std::string(text) + "'");
    }
  };
  PostProcOp op;
  if (kind == "jpeg") {
    arity(1, 1);
    op = JpegOp{parse_int(parts[1], text)};
  } else if (kind == "resize") {
    arity(1, 1);
    op = ResizeOp{parse_number(parts[1], text)};
  } else if (kind == "blur") {
    arity(2, 2);
    op = BlurOp{parse_int(parts[1], text), parse_number(parts[2], text)};
  } else if (kind == "rotate") {
    arity(1, 1);
    op = RotateOp{parse_number(parts[1], text)};
  } else if (kind == "noise") {
    arity(1, 2);
    NoiseOp n{parse_number(parts[1], text), 0};
    if (parts.size() == 3) n.seed = std::stoull(parts[2]);
    op = n;
  } else {
    throw std::invalid_argument("unknown post-processing op '" + std::string(text) +
                                "' (expected jpeg, resize, blur, rotate or noise)");
  }
  validate(op);
  return op;
}

std::string to_string(const PostProcOp& op) {
  return std::visit(Overloaded{
                        [](const JpegOp& o) { return "jpeg:" + std::to_string(o.quality); },
                        [](const ResizeOp& o) { return "resize:" + format_number(o.ratio); },
                        [](const BlurOp& o) {
                          return "blur:" + std::to_string(o.kernel_size) + ":" + format_number(o.sigma);
                        },
                        [](const RotateOp& o) { return "rotate:" + format_number(o.degrees); },
                        [](const NoiseOp& o) {
                          auto s = "noise:" + format_number(o.sigma);
                          if (o.seed != 0) s += ":" + std::to_string(o.seed);
                          return s;
                        },
                    },
                    op);
}

std::string kind_of(const PostProcOp& op) {
  return std::visit(Overloaded{
                        [](const JpegOp&) { return std::string("jpeg"); },
                        [](const ResizeOp&) { return std::string("resize"); },
                        [](const BlurOp&) { return std::string("blur"); },
                        [](const RotateOp&) { return std::string("rotate"); },
                        [](const NoiseOp&) { return std::string("noise"); },
                    },
                    op);
}

std::vector<PostProcOp> default_ops() {
  return {JpegOp{60}, ResizeOp{1.5}, BlurOp{3, 0.8}, RotateOp{10.0}, NoiseOp{0.04472, 0}};
}

torch::Tensor apply_op(const PostProcOp& op, const torch::Tensor& images) {
  validate(op);
  try {
    return std::visit(Overloaded{
                          [&](const JpegOp& o) { return diff_jpeg(images, o.quality, {.hard = true}); },
                          [&](const ResizeOp& o) { return resize_roundtrip(images, o.ratio); },
                          [&](const BlurOp& o) { return gaussian_blur(images, o.kernel_size, o.sigma); },
                          [&](const RotateOp& o) { return rotate(images, o.degrees); },
                          [&](const NoiseOp& o) { return add_gaussian_noise(images, o.sigma, o.seed); },
                      },
                      op);
  } catch (const std::exception& e) {
    throw std::runtime_error("post-processing op " + to_string(op) + " failed: " + e.what());
  }
}

torch::Tensor resize_roundtrip(const torch::Tensor& images, double ratio) {
  check_batch(images, "resize");
  if (!(ratio > 0)) throw std::invalid_argument("resize ratio must be > 0");
  const auto h = images.size(2), w = images.size(3);
  const auto mid_h = static_cast<int64_t>(std::llround(ratio * static_cast<double>(h)));
  const auto mid_w = static_cast<int64_t>(std::llround(ratio * static_cast<double>(w)));
  if (mid_h < 1 || mid_w < 1) {
    throw std::invalid_argument("resize ratio " + format_number(ratio) + " collapses the image below 1 pixel");
  }
  return bilinear(bilinear(images, mid_h, mid_w), h, w).clamp(0.0, 1.0);
}

torch::Tensor gaussian_kernel(int kernel_size, double sigma, torch::Dtype dtype) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("blur kernel size must be odd and >= 1");
  if (!(sigma > 0)) throw std::invalid_argument("blur sigma must be > 0");
  const int r = kernel_size / 2;
  auto k = torch::empty({kernel_size, kernel_size}, torch::kFloat64);
  auto a = k.accessor<double, 2>();
  for (int i = -r; i <= r; ++i) {
    for (int j = -r; j <= r; ++j) a[i + r][j + r] = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
  }
  return (k / k.sum()).to(dtype);
}

torch::Tensor gaussian_blur(const torch::Tensor& images, int kernel_size, double sigma) {
  check_batch(images, "blur");
  const auto kernel = gaussian_kernel(kernel_size, sigma, images.scalar_type());
  if (kernel_size == 1) return images.clone();
  const int64_t r = kernel_size / 2;
  auto padded = F::pad(images, F::PadFuncOptions({r, r, r, r}).mode(torch::kReflect));
  auto weight = kernel.view({1, 1, kernel_size, kernel_size}).repeat({3, 1, 1, 1});
  return F::conv2d(padded, weight, F::Conv2dFuncOptions().groups(3)).clamp(0.0, 1.0);
}

torch::Tensor rotate(const torch::Tensor& images, double degrees) {
  check_batch(images, "rotate");
  const auto b = images.size(0), h = images.size(2), w = images.size(3);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cx = static_cast<double>(w) / 2.0, cy = static_cast<double>(h) / 2.0;

  // Inverse mapping: every output pixel center samples the input rotated by -theta.
  const auto opts = torch::TensorOptions().dtype(images.scalar_type());
  const auto xs = (torch::arange(w, opts) + 0.5 - cx).view({1, w}).expand({h, w});
  const auto ys = (torch::arange(h, opts) + 0.5 - cy).view({h, 1}).expand({h, w});
  const auto src_x = c * xs + s * ys + cx;
  const auto src_y = -s * xs + c * ys + cy;
  // align_corners=false normalization: pixel-center coordinate u maps to 2u/W - 1.
  const auto gx = 2.0 * src_x / static_cast<double>(w) - 1.0;
  const auto gy = 2.0 * src_y / static_cast<double>(h) - 1.0;
  const auto grid = torch::stack({gx, gy}, -1).unsqueeze(0).expand({b, h, w, 2});
  return F::grid_sample(images, grid,
                        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
}

torch::Tensor add_gaussian_noise(const torch::Tensor& images, double sigma, std::uint64_t seed) {
  check_batch(images, "noise");
  if (!(sigma >= 0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (sigma == 0) return images.clone();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto noise = torch::randn(images.sizes(), gen, torch::TensorOptions().dtype(images.scalar_type()));
  return (images + sigma * noise).clamp(0.0, 1.0);
}

}  // namespace toap
