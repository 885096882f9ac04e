#include <gtest/gtest.h>

#include <cmath>

#include "toap/postproc.hpp"

namespace {

TEST(ParseOp, RoundTripsCanonicalText) {
  for (const char* text : {"jpeg:60", "resize:1.5", "blur:3:0.8", "rotate:10", "rotate:-7.5", "noise:0.04472",
                           "noise:0.01:9"}) {
    EXPECT_EQ(toap::to_string(toap::parse_op(text)), text);
  }
  EXPECT_EQ(toap::kind_of(toap::parse_op("blur:5:1")), "blur");
}

TEST(ParseOp, RejectsMalformedOrOutOfRange) {
  for (const char* text : {"jpeg:0", "jpeg:101", "jpeg:6x", "resize:0", "resize:-1", "blur:4:1", "blur:3:0",
                           "blur:3", "rotate:", "noise:-0.1", "sharpen:2", "JPEG:60", ""}) {
    EXPECT_THROW(toap::parse_op(text), std::invalid_argument) << text;
  }
}

TEST(DefaultOps, FiveOpsInProtocolOrder) {
  std::vector<std::string> names;
  for (const auto& op : toap::default_ops()) names.push_back(toap::to_string(op));
  EXPECT_EQ(names, (std::vector<std::string>{"jpeg:60", "resize:1.5", "blur:3:0.8", "rotate:10", "noise:0.04472"}));
}

TEST(Ops, KeepUnitRangeAndAreDeterministic) {
  torch::manual_seed(0);
  const auto x = torch::rand({2, 3, 32, 32});
  for (const auto& op : toap::default_ops()) {
    const auto a = toap::apply_op(op, x), b = toap::apply_op(op, x);
    EXPECT_EQ(a.sizes(), x.sizes());
    EXPECT_GE(a.min().item<float>(), 0.0f) << toap::to_string(op);
    EXPECT_LE(a.max().item<float>(), 1.0f) << toap::to_string(op);
    EXPECT_TRUE(torch::equal(a, b)) << toap::to_string(op);
  }
}

TEST(Resize, IdentityAndConstants) {
  torch::manual_seed(1);
  const auto x = torch::rand({1, 3, 64, 64});
  EXPECT_LE((toap::resize_roundtrip(x, 1.0) - x).abs().max().item<float>(), 1e-6f);
  const auto y = toap::resize_roundtrip(x, 1.5);
  EXPECT_EQ(y.sizes(), x.sizes());
  const auto c = torch::full({1, 3, 64, 64}, 0.37f);
  for (double r : {0.5, 0.75, 1.5, 2.0}) EXPECT_LE((toap::resize_roundtrip(c, r) - c).abs().max().item<float>(), 1e-6f);
}

TEST(Blur, ImpulseReproducesGaussianKernel) {
  auto x = torch::zeros({1, 3, 9, 9}, torch::kFloat64);
  x.index_put_({0, torch::indexing::Slice(), 4, 4}, 1.0);
  const auto y = toap::gaussian_blur(x, 3, 0.8);
  double expect[3][3], sum = 0;
  for (int i = -1; i <= 1; ++i) {
    for (int j = -1; j <= 1; ++j) sum += expect[i + 1][j + 1] = std::exp(-(i * i + j * j) / (2 * 0.8 * 0.8));
  }
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) EXPECT_NEAR(y[0][c][3 + i][3 + j].item<double>(), expect[i][j] / sum, 1e-12);
    }
  }
  EXPECT_NEAR(y.sum().item<double>(), 3.0, 1e-12);
}

TEST(Blur, ConstantUnchangedAndUnitKernelIsIdentity) {
  torch::manual_seed(2);
  const auto c = torch::full({1, 3, 16, 16}, 0.6f);
  EXPECT_LE((toap::gaussian_blur(c, 7, 2.0) - c).abs().max().item<float>(), 1e-6f);
  const auto x = torch::rand({1, 3, 16, 16});
  EXPECT_TRUE(torch::allclose(toap::gaussian_blur(x, 1, 0.8), x));
  EXPECT_NEAR(toap::gaussian_kernel(5, 1.3).sum().item<float>(), 1.0f, 1e-6f);
}

TEST(Rotate, ZeroAndFullTurnAreIdentity) {
  torch::manual_seed(3);
  const auto x = torch::rand({1, 3, 32, 32});
  EXPECT_LE((toap::rotate(x, 0) - x).abs().max().item<float>(), 1e-6f);
  EXPECT_LE((toap::rotate(x, 360) - x).abs().max().item<float>(), 1e-3f);
  EXPECT_FALSE(torch::allclose(toap::rotate(x, 10), x));
}

TEST(Rotate, CenteredDiskUnchangedInside) {
  const int n = 64;
  const double center = (n - 1) / 2.0;
  auto x = torch::zeros({1, 3, n, n});
  auto inside = torch::zeros({n, n}, torch::kBool);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double r = std::hypot(i - center, j - center);
      if (r <= 20) x.index_put_({0, torch::indexing::Slice(), i, j}, 0.8f);
      if (r <= 18) inside[i][j] = true;
    }
  }
  for (double deg : {10.0, 33.0, 90.0}) {
    const auto diff = (toap::rotate(x, deg) - x).abs().amax(1)[0];
    EXPECT_LE(diff.masked_select(inside).max().item<float>(), 1e-3f) << deg;
  }
}

TEST(Noise, SigmaZeroSeedAndStatistics) {
  const auto gray = torch::full({1, 3, 256, 256}, 0.5f);
  EXPECT_TRUE(torch::equal(toap::add_gaussian_noise(gray, 0.0, 1), gray));
  const auto a = toap::add_gaussian_noise(gray, 0.04472, 5), b = toap::add_gaussian_noise(gray, 0.04472, 5),
             c = toap::add_gaussian_noise(gray, 0.04472, 6);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_FALSE(torch::equal(a, c));
  ASSERT_GE(a.numel(), 100000);
  const double sd = (a - gray).to(torch::kFloat64).std().item<double>();
  EXPECT_NEAR(sd, 0.04472, 0.05 * 0.04472);
}

}  // namespace
