#include "toap/image_io.hpp"

#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "toap/tensor_container.hpp"

namespace toap {

torch::Tensor read_image(const std::filesystem::path& path, int size) {
  if (size <= 0) throw std::invalid_argument("image size must be positive");
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (rgb.rows != size || rgb.cols != size) {
    cv::Mat resized;
    cv::resize(rgb, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    rgb = resized;
  }
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  auto hwc = torch::from_blob(f.data, {size, size, 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous().clone();
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw std::invalid_argument("write_png expects a [3, H, W] tensor");
  }
  auto hwc = (image.detach().to(torch::kCPU, torch::kFloat32).clamp(0, 1) * 255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  const int h = static_cast<int>(hwc.size(0));
  const int w = static_cast<int>(hwc.size(1));
  cv::Mat rgb(h, w, CV_8UC3, hwc.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", bgr, buf)) throw std::runtime_error("PNG encoding failed for " + path.string());
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

torch::Tensor tile_rows(std::span<const torch::Tensor> rows) {
  if (rows.empty()) throw std::invalid_argument("tile_rows needs at least one row");
  const auto n = rows[0].size(0);
  const auto h = rows[0].size(2);
  const auto w = rows[0].size(3);
  constexpr int64_t gutter = 2;
  const auto out_h = static_cast<int64_t>(rows.size()) * (h + gutter) - gutter;
  const auto out_w = n * (w + gutter) - gutter;
  auto out = torch::ones({3, out_h, out_w});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].sizes().equals(rows[0].sizes())) {
      throw std::invalid_argument("tile_rows: rows differ in shape");
    }
    for (int64_t i = 0; i < n; ++i) {
      const auto top = static_cast<int64_t>(r) * (h + gutter);
      const auto left = i * (w + gutter);
      out.slice(1, top, top + h).slice(2, left, left + w).copy_(rows[r][i].detach().to(torch::kFloat32));
    }
  }
  return out;
}

}  // namespace toap
