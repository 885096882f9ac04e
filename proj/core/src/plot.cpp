#include "toap/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "toap/tensor_container.hpp"

namespace toap {
namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;

const std::array<cv::Scalar, 6> kColors = {cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255),
                                           cv::Scalar(44, 160, 44),  cv::Scalar(40, 39, 214),
                                           cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140)};

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(30, 30, 30), 1, cv::LINE_AA);
}

}  // namespace

void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<PlotSeries>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot series '" + s.name + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  y0 = std::min(y0, 0.0);
  y1 = std::max(y1, y0 + 1e-3);
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  cv::Mat img(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  const int pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)); };
  auto py = [&](double y) { return kTop + ph - static_cast<int>(std::lround((y - y0) / (y1 - y0) * ph)); };

  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    cv::line(img, {kLeft, py(yv)}, {kLeft + pw, py(yv)}, cv::Scalar(225, 225, 225));
    text(img, tick_label(yv), {8, py(yv) + 4}, 0.4);
    text(img, tick_label(xv), {px(xv) - 12, kTop + ph + 18}, 0.4);
  }
  if (y0 < 0 && y1 > 0) cv::line(img, {kLeft, py(0)}, {kLeft + pw, py(0)}, cv::Scalar(150, 150, 150));
  cv::rectangle(img, {kLeft, kTop}, {kLeft + pw, kTop + ph}, cv::Scalar(60, 60, 60));
  text(img, title, {kLeft + 60, 25}, 0.6);
  text(img, x_label, {kLeft + pw / 2 - 30, kHeight - 15});
  text(img, y_label, {8, kTop - 10}, 0.4);

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const auto color = kColors[si % kColors.size()];
    std::vector<std::size_t> order(s.x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
    for (std::size_t i = 0; i < order.size(); ++i) {
      const cv::Point p{px(s.x[order[i]]), py(s.y[order[i]])};
      cv::circle(img, p, 3, color, cv::FILLED, cv::LINE_AA);
      if (i > 0) cv::line(img, {px(s.x[order[i - 1]]), py(s.y[order[i - 1]])}, p, color, 2, cv::LINE_AA);
    }
    const int ly = kTop + 15 + static_cast<int>(si) * 20;
    cv::line(img, {kLeft + pw + 10, ly - 4}, {kLeft + pw + 30, ly - 4}, color, 2, cv::LINE_AA);
    text(img, s.name, {kLeft + pw + 35, ly}, 0.4);
  }

  std::vector<uchar> png;
  if (!cv::imencode(".png", img, png)) throw std::runtime_error("failed to encode plot " + path.string());
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
}

}  // namespace toap
