#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "toap/hash_model.hpp"
#include "toap/tensor_container.hpp"

namespace toap {

/// Square sliding window applied along both image axes.
struct GridSpec {
  int64_t window = 32;
  int64_t stride = 16;

  /// window = size / 2, stride = size / 4.
  static GridSpec default_for(int64_t size);
  /// Throws unless 0 < stride <= window <= extent and (extent - window) % stride == 0 on both axes.
  void validate(int64_t height, int64_t width) const;
  /// 0, stride, ..., extent - window
  std::vector<int64_t> offsets(int64_t extent) const;
};

struct Patch {
  torch::Tensor pixels;  // [B, 3, window, window]
  int64_t row = 0;
  int64_t col = 0;
};

/// Patches in row-major offset order.
std::vector<Patch> grid_split(const torch::Tensor& images, const GridSpec& spec);
/// Per-pixel mean of every patch covering it. Differentiable w.r.t. the patches.
torch::Tensor grid_merge(std::span<const Patch> patches, int64_t height, int64_t width);

class ConvReluImpl : public torch::nn::Module {
 public:
  ConvReluImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(ConvRelu);

/// x + conv(relu(conv(x)))
class PlainResidualImpl : public torch::nn::Module {
 public:
  explicit PlainResidualImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(PlainResidual);

/// Three-level U-Net with two residual blocks at the bottleneck. The output
/// is sigmoid(logit(x) + r(x)); the last layer starts at zero, so a fresh
/// network is the identity on [1e-3, 1 - 1e-3].
class MappingNetImpl : public torch::nn::Module {
 public:
  explicit MappingNetImpl(std::array<int64_t, 3> widths = {16, 32, 64});
  torch::Tensor forward(const torch::Tensor& images);
  const std::array<int64_t, 3>& widths() const { return widths_; }

 private:
  std::array<int64_t, 3> widths_;
  ConvRelu enc1_{nullptr}, enc2_{nullptr}, enc3_{nullptr};
  torch::nn::Sequential bottleneck_{nullptr};
  torch::nn::ConvTranspose2d up2_{nullptr}, up1_{nullptr};
  ConvRelu dec2_{nullptr}, dec1_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(MappingNet);

struct CGConfig {
  int quality = 60;
  std::array<int64_t, 3> widths = {16, 32, 64};
  double finetune_lr = 1e-4;
  std::uint64_t seed = 0;
};

/// Mapping network composed with soft diff_jpeg, plus its fine-tuning optimizer.
class CompressionGenerator {
 public:
  explicit CompressionGenerator(CGConfig cfg = {});

  /// mapping net, then diff_jpeg(quality, soft). Output has the input shape, in [0, 1].
  torch::Tensor forward(const torch::Tensor& images);

  MappingNet& net() { return net_; }
  const CGConfig& config() const { return cfg_; }
  int quality() const { return cfg_.quality; }
  void set_quality(int quality);

  /// Incremented by every parameter update.
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  /// Toggles requires_grad on every parameter.
  void set_trainable(bool trainable);
  torch::optim::Adam& optimizer() { return *optimizer_; }

  /// Parameters and buffers in a container (names prefixed "net.").
  TensorContainer state() const;
  void load_state(const TensorContainer& state);

  void save(const std::filesystem::path& path, const GridSpec& grid) const;
  /// Reads a checkpoint and its `<path>.json` sidecar (quality, widths, grid, version).
  static CompressionGenerator load(const std::filesystem::path& path, GridSpec* grid = nullptr);

 private:
  CGConfig cfg_;
  MappingNet net_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::uint64_t version_ = 0;
};

torch::Tensor cg_forward(CompressionGenerator& cg, const torch::Tensor& images);

/// split -> cg_forward on every patch (one shared generator) -> overlap-averaged merge -> cg_forward.
torch::Tensor cg_local_global(CompressionGenerator& cg, const torch::Tensor& images, const GridSpec& spec);

enum class CgMode { None, Local, Global, LocalGlobal };
CgMode parse_cg_mode(std::string_view text);
std::string to_string(CgMode mode);

/// None: identity. Local: split, per-patch cg, merge. Global: cg. LocalGlobal: cg_local_global.
torch::Tensor apply_cg(CompressionGenerator& cg, const torch::Tensor& images, CgMode mode, const GridSpec& spec);

struct PretrainConfig {
  int epochs = 3;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Fits cg_forward(x) to hard diff_jpeg(x, target_quality) under MSE. The
/// generator's quality is set to target_quality. Returns the mean loss per epoch.
std::vector<double> pretrain_cg(CompressionGenerator& cg, const torch::Tensor& images, int target_quality,
                                const PretrainConfig& cfg);

struct FinetuneWeights {
  double pixel = 1.0;
  double feature = 1e-3;
  double hash = 1e-5;
};

struct FinetuneLoss {
  torch::Tensor pixel, feature, hash, total;
};

/// The three terms below for an already generated `processed` batch.
FinetuneLoss finetune_loss_terms(const torch::Tensor& processed, const torch::Tensor& clean, HashModel& model,
                                 const FinetuneWeights& weights);

/// With x' = clip(x + delta, 0, 1) and y = cg_forward(x'):
///   pixel   = mean (y - x)^2
///   feature = mean (f(y) - f(x))^2
///   hash    = mean (K - tanh(H(y)) . tanh(H(x))) / 2
/// total = weighted sum. Gradients reach the generator only.
FinetuneLoss cg_finetune_loss(CompressionGenerator& cg, const torch::Tensor& clean, const torch::Tensor& delta,
                              HashModel& model, const FinetuneWeights& weights);

/// One Adam step on the total loss at `lr`; bumps the version even at lr = 0.
/// Returns the loss before the step.
double cg_finetune_step(CompressionGenerator& cg, const torch::Tensor& clean, const torch::Tensor& delta,
                        HashModel& model, const FinetuneWeights& weights, double lr);

}  // namespace toap
