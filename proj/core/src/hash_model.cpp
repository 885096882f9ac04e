#include "toap/hash_model.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "toap/tensor_container.hpp"

namespace toap {
namespace nn = torch::nn;

torch::Tensor sign_pos(const torch::Tensor& x) {
  return torch::where(x >= 0, torch::ones_like(x), -torch::ones_like(x));
}

ConvABackboneImpl::ConvABackboneImpl() {
  layers_ = nn::Sequential();
  int64_t in = 3;
  for (int64_t width : {16, 32, 64, 128}) {
    layers_->push_back(nn::Conv2d(nn::Conv2dOptions(in, width, 3).padding(1)));
    layers_->push_back(nn::BatchNorm2d(width));
    layers_->push_back(nn::ReLU());
    layers_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
    in = width;
  }
  register_module("layers", layers_);
}

torch::Tensor ConvABackboneImpl::forward(const torch::Tensor& images) {
  return layers_->forward(images).mean({2, 3});
}

ResidualBlockImpl::ResidualBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride) {
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).stride(stride).padding(1)));
  bn1_ = register_module("bn1", nn::BatchNorm2d(out_channels));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  bn2_ = register_module("bn2", nn::BatchNorm2d(out_channels));
  shortcut_ = nn::Sequential();
  if (in_channels != out_channels || stride != 1) {
    shortcut_->push_back(nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1).stride(stride)));
    shortcut_->push_back(nn::BatchNorm2d(out_channels));
  }
  register_module("shortcut", shortcut_);
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1_(conv1_(x)));
  y = bn2_(conv2_(y));
  auto skip = shortcut_->is_empty() ? x : shortcut_->forward(x);
  return torch::relu(y + skip);
}

ConvBBackboneImpl::ConvBBackboneImpl() {
  stem_ = nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, 32, 3).padding(1)), nn::BatchNorm2d(32), nn::ReLU(),
                         nn::MaxPool2d(nn::MaxPool2dOptions(2)));
  blocks_ = nn::Sequential(ResidualBlock(32, 32, 1), ResidualBlock(32, 64, 2), ResidualBlock(64, 128, 2));
  register_module("stem", stem_);
  register_module("blocks", blocks_);
}

torch::Tensor ConvBBackboneImpl::forward(const torch::Tensor& images) {
  return blocks_->forward(stem_->forward(images)).mean({2, 3});
}

std::shared_ptr<BackboneImpl> make_backbone(const std::string& arch) {
  if (arch == "convA") return std::make_shared<ConvABackboneImpl>();
  if (arch == "convB") return std::make_shared<ConvBBackboneImpl>();
  throw std::invalid_argument("unknown backbone '" + arch + "' (available: convA, convB)");
}

std::vector<std::string> available_backbones() { return {"convA", "convB"}; }

HashModelImpl::HashModelImpl(std::string arch, int64_t code_bits, int64_t image_size)
    : arch_(std::move(arch)), code_bits_(code_bits), image_size_(image_size) {
  if (code_bits_ <= 0 || code_bits_ % 2 != 0) {
    throw std::invalid_argument("code length must be positive and even, got " + std::to_string(code_bits_));
  }
  backbone_ = register_module("backbone", make_backbone(arch_));
  head_ = register_module("head", nn::Linear(backbone_->feature_dim(), code_bits_));
}

void HashModelImpl::check_input(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != image_size_ || images.size(3) != image_size_) {
    throw std::invalid_argument("hash model expects [B, 3, " + std::to_string(image_size_) + ", " +
                                std::to_string(image_size_) + "] input, got " + c10::str(images.sizes()));
  }
}

torch::Tensor HashModelImpl::features(const torch::Tensor& images) {
  check_input(images);
  return backbone_->forward(images);
}

torch::Tensor HashModelImpl::preactivation(const torch::Tensor& images) { return head_(features(images)); }

torch::Tensor HashModelImpl::forward_continuous(const torch::Tensor& images) {
  return torch::tanh(preactivation(images));
}

torch::Tensor HashModelImpl::forward_binary(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  return sign_pos(preactivation(images));
}

void HashModelImpl::freeze() {
  eval();
  for (auto& p : parameters()) p.set_requires_grad(false);
}

int64_t HashModelImpl::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("model.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("model.batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("model.learning_rate must be > 0");
  if (code_bits <= 0 || code_bits % 2 != 0) throw std::invalid_argument("model.bits must be positive and even");
  if (quantization_weight < 0) throw std::invalid_argument("model.quantization_weight must be >= 0");
  make_backbone(arch);
}

torch::Tensor hash_targets(int identities, int code_bits, std::uint64_t seed) {
  int64_t order = 1;
  while (order < code_bits) order *= 2;
  if (identities < order) {
    auto h = torch::ones({1, 1});
    while (h.size(0) < order) {
      h = torch::cat({torch::cat({h, h}, 1), torch::cat({h, -h}, 1)}, 0);
    }
    // Row 0 is all ones; skip it.
    return h.slice(0, 1, identities + 1).slice(1, 0, code_bits).contiguous();
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  auto t = torch::empty({identities, code_bits});
  auto a = t.accessor<float, 2>();
  for (int i = 0; i < identities; ++i) {
    for (int k = 0; k < code_bits; ++k) a[i][k] = coin(rng) ? 1.0f : -1.0f;
  }
  return t;
}

HashModel train_hash_model(std::span<const ImageSample> train, const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("training set is empty");
  const int identities = count_identities(train);
  const auto labels = labels_of(train);
  for (int l : labels) {
    if (l < 0 || l >= identities) {
      throw std::invalid_argument("training labels must cover 0..P-1 without gaps");
    }
  }

  const auto images = stack_pixels(train);
  const auto label_tensor = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()), torch::kInt64);
  const auto targets = hash_targets(identities, cfg.code_bits, cfg.seed);

  torch::manual_seed(cfg.seed);
  HashModel model(cfg.arch, cfg.code_bits, images.size(2));
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.learning_rate));

  std::mt19937_64 rng(cfg.seed);
  std::vector<int64_t> order(train.size());
  const double k = cfg.code_bits;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model->train();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + end), torch::kInt64);
      auto x = images.index_select(0, idx);
      auto t = targets.index_select(0, label_tensor.index_select(0, idx));
      auto z = model->forward_continuous(x);
      auto loss = ((k - (t * z).sum(1)) / 2).mean() + cfg.quantization_weight * (1 - z.abs()).mean();
      if (!std::isfinite(loss.item<double>())) {
        throw std::runtime_error("hash training diverged (non-finite loss) at epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(batches + 1));
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += loss.item<double>();
      ++batches;
    }
    if (log) log->epoch_loss.push_back(total / batches);
  }
  model->freeze();
  return model;
}

torch::Tensor encode(HashModel& model, const torch::Tensor& images, bool binary, int64_t batch_size) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (int64_t start = 0; start < images.size(0); start += batch_size) {
    auto x = images.slice(0, start, std::min(images.size(0), start + batch_size));
    parts.push_back(binary ? model->forward_binary(x) : model->forward_continuous(x));
  }
  return torch::cat(parts, 0);
}

void save_hash_model(HashModel& model, const TrainConfig& cfg, const std::filesystem::path& path) {
  TensorContainer c;
  for (const auto& item : model->named_parameters()) c.add(item.key(), item.value());
  for (const auto& item : model->named_buffers()) c.add(item.key(), item.value());
  c.save(path);

  nlohmann::json manifest = {
      {"kind", "hash_model"},
      {"arch_id", model->arch()},
      {"K", model->code_bits()},
      {"image_size", model->image_size()},
      {"parameter_count", model->parameter_count()},
      {"train",
       {{"epochs", cfg.epochs},
        {"batch_size", cfg.batch_size},
        {"learning_rate", cfg.learning_rate},
        {"seed", cfg.seed},
        {"quantization_weight", cfg.quantization_weight}}},
  };
  auto manifest_path = path;
  manifest_path += ".json";
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
}

HashModel load_hash_model(const std::filesystem::path& path) {
  auto manifest_path = path;
  manifest_path += ".json";
  const auto manifest = nlohmann::json::parse(read_text_file(manifest_path));
  HashModel model(manifest.at("arch_id").get<std::string>(), manifest.at("K").get<int64_t>(),
                  manifest.at("image_size").get<int64_t>());
  const auto c = TensorContainer::load(path);
  torch::NoGradGuard no_grad;
  for (auto& item : model->named_parameters()) item.value().copy_(c.at(item.key()));
  for (auto& item : model->named_buffers()) {
    // num_batches_tracked is int64; the container stores float32.
    item.value().copy_(c.at(item.key()).to(item.value().dtype()));
  }
  model->freeze();
  return model;
}

}  // namespace toap
