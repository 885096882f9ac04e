#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "toap/dataset.hpp"

namespace toap {

/// sign(x) with sign(0) := +1. Used for codes and for every vote.
torch::Tensor sign_pos(const torch::Tensor& x);

/// Feature extractor f: [B, 3, H, W] -> [B, feature_dim()].
class BackboneImpl : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& images) = 0;
  virtual int64_t feature_dim() const = 0;
};

/// 4 x (conv3x3 - batchnorm - relu - maxpool), widths 16/32/64/128, global average pool.
class ConvABackboneImpl : public BackboneImpl {
 public:
  ConvABackboneImpl();
  torch::Tensor forward(const torch::Tensor& images) override;
  int64_t feature_dim() const override { return 128; }

 private:
  torch::nn::Sequential layers_{nullptr};
};

/// Basic residual block with an optional strided projection shortcut.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Stem (conv-bn-relu-maxpool) then 3 residual blocks, widths 32/64/128, global average pool.
class ConvBBackboneImpl : public BackboneImpl {
 public:
  ConvBBackboneImpl();
  torch::Tensor forward(const torch::Tensor& images) override;
  int64_t feature_dim() const override { return 128; }

 private:
  torch::nn::Sequential stem_{nullptr};
  torch::nn::Sequential blocks_{nullptr};
};

/// Constructs a backbone by architecture id ("convA", "convB").
std::shared_ptr<BackboneImpl> make_backbone(const std::string& arch);
std::vector<std::string> available_backbones();

/// Deep hash model F = sign o H o f with an affine hash head H.
class HashModelImpl : public torch::nn::Module {
 public:
  HashModelImpl(std::string arch, int64_t code_bits, int64_t image_size);

  /// f(x)
  torch::Tensor features(const torch::Tensor& images);
  /// H(f(x))
  torch::Tensor preactivation(const torch::Tensor& images);
  /// tanh(H(f(x))); differentiable w.r.t. images.
  torch::Tensor forward_continuous(const torch::Tensor& images);
  /// sign(H(f(x))) with zero mapped to +1; computed without autograd.
  torch::Tensor forward_binary(const torch::Tensor& images);

  /// Evaluation mode with gradients disabled on every parameter.
  void freeze();

  const std::string& arch() const { return arch_; }
  int64_t code_bits() const { return code_bits_; }
  int64_t image_size() const { return image_size_; }
  int64_t parameter_count() const;
  torch::nn::Linear& head() { return head_; }

 private:
  void check_input(const torch::Tensor& images) const;

  std::string arch_;
  int64_t code_bits_;
  int64_t image_size_;
  std::shared_ptr<BackboneImpl> backbone_;
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(HashModel);

struct TrainConfig {
  int epochs = 15;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int code_bits = 32;
  std::string arch = "convA";
  double quantization_weight = 0.1;

  void validate() const;
};

struct TrainLog {
  std::vector<double> epoch_loss;
};

/// P x K matrix of +-1 identity targets: rows 1..P of a Sylvester Hadamard
/// matrix (truncated to K columns) when P < K rows are available, otherwise
/// seeded random +-1 rows.
torch::Tensor hash_targets(int identities, int code_bits, std::uint64_t seed);

/// Center-based hash training: minimizes mean (K - t_p . tanh(z)) / 2 plus
/// quantization_weight * mean(1 - |tanh(z)|). Returns a frozen model.
HashModel train_hash_model(std::span<const ImageSample> train, const TrainConfig& cfg,
                           TrainLog* log = nullptr);

/// Codes for a whole image set, batched. Binary codes by default.
torch::Tensor encode(HashModel& model, const torch::Tensor& images, bool binary = true,
                     int64_t batch_size = 64);

void save_hash_model(HashModel& model, const TrainConfig& cfg, const std::filesystem::path& path);
/// Loads a checkpoint written by save_hash_model (manifest next to it: `<path>.json`).
HashModel load_hash_model(const std::filesystem::path& path);

}  // namespace toap
