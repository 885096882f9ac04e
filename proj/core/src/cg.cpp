#include "toap/cg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "toap/postproc.hpp"
#include "toap/retrieval.hpp"

namespace toap {
namespace nn = torch::nn;

GridSpec GridSpec::default_for(int64_t size) { return {size / 2, size / 4}; }

void GridSpec::validate(int64_t height, int64_t width) const {
  for (const auto extent : {height, width}) {
    if (stride <= 0 || stride > window || window > extent || (extent - window) % stride != 0) {
      throw std::invalid_argument("grid window " + std::to_string(window) + " / stride " + std::to_string(stride) +
                                  " does not tile an extent of " + std::to_string(extent));
    }
  }
}

std::vector<int64_t> GridSpec::offsets(int64_t extent) const {
  std::vector<int64_t> out;
  for (int64_t o = 0; o + window <= extent; o += stride) out.push_back(o);
  return out;
}

std::vector<Patch> grid_split(const torch::Tensor& images, const GridSpec& spec) {
  if (images.dim() != 4) throw std::invalid_argument("grid_split expects [B, C, H, W] images");
  const auto h = images.size(2), w = images.size(3);
  spec.validate(h, w);
  std::vector<Patch> patches;
  for (const auto r : spec.offsets(h)) {
    for (const auto c : spec.offsets(w)) {
      patches.push_back({images.slice(2, r, r + spec.window).slice(3, c, c + spec.window), r, c});
    }
  }
  return patches;
}

torch::Tensor grid_merge(std::span<const Patch> patches, int64_t height, int64_t width) {
  if (patches.empty()) throw std::invalid_argument("grid_merge needs at least one patch");
  const auto& first = patches.front().pixels;
  auto sum = torch::zeros({first.size(0), first.size(1), height, width}, first.options());
  auto count = torch::zeros({1, 1, height, width}, first.options().requires_grad(false));
  for (const auto& p : patches) {
    const auto ph = p.pixels.size(2), pw = p.pixels.size(3);
    if (p.row < 0 || p.col < 0 || p.row + ph > height || p.col + pw > width) {
      throw std::invalid_argument("patch at (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                                  ") lies outside the " + std::to_string(height) + "x" + std::to_string(width) +
                                  " canvas");
    }
    sum = sum + nn::functional::pad(p.pixels, nn::functional::PadFuncOptions(
                                                  {p.col, width - p.col - pw, p.row, height - p.row - ph}));
    count.slice(2, p.row, p.row + ph).slice(3, p.col, p.col + pw) += 1;
  }
  if (count.min().item<double>() < 1) throw std::logic_error("grid_merge: patches leave part of the canvas uncovered");
  return sum / count;
}

ConvReluImpl::ConvReluImpl(int64_t in_channels, int64_t out_channels) {
  conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
}

torch::Tensor ConvReluImpl::forward(const torch::Tensor& x) { return torch::relu(conv_(x)); }

PlainResidualImpl::PlainResidualImpl(int64_t channels) {
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor PlainResidualImpl::forward(const torch::Tensor& x) { return x + conv2_(torch::relu(conv1_(x))); }

MappingNetImpl::MappingNetImpl(std::array<int64_t, 3> widths) : widths_(widths) {
  const auto [a, b, c] = widths;
  if (a <= 0 || b <= 0 || c <= 0) throw std::invalid_argument("mapping network widths must be positive");
  enc1_ = register_module("enc1", ConvRelu(3, a));
  enc2_ = register_module("enc2", ConvRelu(a, b));
  enc3_ = register_module("enc3", ConvRelu(b, c));
  bottleneck_ = register_module("bottleneck", nn::Sequential(PlainResidual(c), PlainResidual(c)));
  up2_ = register_module("up2", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, b, 2).stride(2)));
  dec2_ = register_module("dec2", ConvRelu(2 * b, b));
  up1_ = register_module("up1", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(b, a, 2).stride(2)));
  dec1_ = register_module("dec1", ConvRelu(2 * a, a));
  out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(a, 3, 1)));
  torch::NoGradGuard no_grad;
  out_->weight.zero_();
  out_->bias.zero_();
}

torch::Tensor MappingNetImpl::forward(const torch::Tensor& images) {
  if (images.size(2) % 4 != 0 || images.size(3) % 4 != 0) {
    throw std::invalid_argument("mapping network needs H and W divisible by 4, got " + c10::str(images.sizes()));
  }
  const auto e1 = enc1_(images);
  const auto e2 = enc2_(torch::max_pool2d(e1, 2));
  const auto e3 = bottleneck_->forward(enc3_(torch::max_pool2d(e2, 2)));
  const auto d2 = dec2_(torch::cat({up2_(e3), e2}, 1));
  const auto d1 = dec1_(torch::cat({up1_(d2), e1}, 1));
  const auto x = images.clamp(1e-3, 1.0 - 1e-3);
  return torch::sigmoid(torch::log(x / (1.0 - x)) + out_(d1));
}

CompressionGenerator::CompressionGenerator(CGConfig cfg) : cfg_(cfg) {
  set_quality(cfg_.quality);
  torch::manual_seed(cfg_.seed);
  net_ = MappingNet(cfg_.widths);
  set_trainable(false);
  optimizer_ = std::make_unique<torch::optim::Adam>(net_->parameters(), torch::optim::AdamOptions(cfg_.finetune_lr));
}

void CompressionGenerator::set_quality(int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("CG quality must be in [1, 100]");
  cfg_.quality = quality;
}

torch::Tensor CompressionGenerator::forward(const torch::Tensor& images) {
  return diff_jpeg(net_->forward(images), cfg_.quality, {.hard = false});
}

void CompressionGenerator::set_trainable(bool trainable) {
  for (auto& p : net_->parameters()) p.requires_grad_(trainable);
}

TensorContainer CompressionGenerator::state() const {
  TensorContainer c;
  for (const auto& item : net_->named_parameters()) c.add("net." + item.key(), item.value());
  for (const auto& item : net_->named_buffers()) c.add("net." + item.key(), item.value());
  return c;
}

void CompressionGenerator::load_state(const TensorContainer& state) {
  torch::NoGradGuard no_grad;
  for (auto& item : net_->named_parameters()) item.value().copy_(state.at("net." + item.key()));
  for (auto& item : net_->named_buffers()) {
    item.value().copy_(state.at("net." + item.key()).to(item.value().dtype()));
  }
}

void CompressionGenerator::save(const std::filesystem::path& path, const GridSpec& grid) const {
  state().save(path);
  nlohmann::json meta = {{"kind", "compression_generator"},
                         {"quality", cfg_.quality},
                         {"widths", cfg_.widths},
                         {"finetune_lr", cfg_.finetune_lr},
                         {"seed", cfg_.seed},
                         {"grid", {{"window", grid.window}, {"stride", grid.stride}}},
                         {"version", version_}};
  auto meta_path = path;
  meta_path += ".json";
  write_file_atomic(meta_path, meta.dump(2) + "\n");
}

CompressionGenerator CompressionGenerator::load(const std::filesystem::path& path, GridSpec* grid) {
  auto meta_path = path;
  meta_path += ".json";
  const auto meta = nlohmann::json::parse(read_text_file(meta_path));
  CGConfig cfg;
  cfg.quality = meta.at("quality").get<int>();
  cfg.widths = meta.at("widths").get<std::array<int64_t, 3>>();
  cfg.finetune_lr = meta.at("finetune_lr").get<double>();
  cfg.seed = meta.at("seed").get<std::uint64_t>();
  CompressionGenerator cg(cfg);
  cg.load_state(TensorContainer::load(path));
  cg.version_ = meta.at("version").get<std::uint64_t>();
  if (grid != nullptr) {
    grid->window = meta.at("grid").at("window").get<int64_t>();
    grid->stride = meta.at("grid").at("stride").get<int64_t>();
  }
  return cg;
}

torch::Tensor cg_forward(CompressionGenerator& cg, const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw std::invalid_argument("cg_forward expects [B, 3, H, W] images, got " + c10::str(images.sizes()));
  }
  if (images.size(2) % 8 != 0 || images.size(3) % 8 != 0) {
    throw std::invalid_argument("cg_forward needs H and W to be multiples of 8, got " + c10::str(images.sizes()));
  }
  return cg.forward(images);
}

namespace {

// Every patch of the batch goes through the generator in a single call.
torch::Tensor local_pass(CompressionGenerator& cg, const torch::Tensor& images, const GridSpec& spec) {
  if (spec.window % 8 != 0) {
    throw std::invalid_argument("grid window must be a multiple of 8, got " + std::to_string(spec.window));
  }
  auto patches = grid_split(images, spec);
  std::vector<torch::Tensor> stack;
  stack.reserve(patches.size());
  for (const auto& p : patches) stack.push_back(p.pixels);
  const auto processed = cg_forward(cg, torch::cat(stack, 0)).chunk(static_cast<int64_t>(patches.size()), 0);
  for (std::size_t i = 0; i < patches.size(); ++i) patches[i].pixels = processed[i];
  return grid_merge(patches, images.size(2), images.size(3));
}

}  // namespace

torch::Tensor cg_local_global(CompressionGenerator& cg, const torch::Tensor& images, const GridSpec& spec) {
  return cg_forward(cg, local_pass(cg, images, spec));
}

CgMode parse_cg_mode(std::string_view text) {
  if (text == "none") return CgMode::None;
  if (text == "local") return CgMode::Local;
  if (text == "global") return CgMode::Global;
  if (text == "local+global") return CgMode::LocalGlobal;
  throw std::invalid_argument("unknown CG mode '" + std::string(text) + "' (expected none, local, global, local+global)");
}

std::string to_string(CgMode mode) {
  switch (mode) {
    case CgMode::None: return "none";
    case CgMode::Local: return "local";
    case CgMode::Global: return "global";
    case CgMode::LocalGlobal: return "local+global";
  }
  return "?";
}

torch::Tensor apply_cg(CompressionGenerator& cg, const torch::Tensor& images, CgMode mode, const GridSpec& spec) {
  switch (mode) {
    case CgMode::None: return images;
    case CgMode::Local: return local_pass(cg, images, spec);
    case CgMode::Global: return cg_forward(cg, images);
    case CgMode::LocalGlobal: return cg_local_global(cg, images, spec);
  }
  throw std::logic_error("unhandled CG mode");
}

std::vector<double> pretrain_cg(CompressionGenerator& cg, const torch::Tensor& images, int target_quality,
                                const PretrainConfig& cfg) {
  if (images.dim() != 4 || images.size(0) == 0) throw std::invalid_argument("pretraining needs a non-empty image batch");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw std::invalid_argument("pretraining epochs >= 0 and batch size >= 1");
  cg.set_quality(target_quality);
  std::vector<double> losses;
  if (cfg.epochs == 0) return losses;

  cg.set_trainable(true);
  torch::optim::Adam opt(cg.net()->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  const auto targets = diff_jpeg(images, target_quality, {.hard = true});
  std::vector<int64_t> order(static_cast<std::size_t>(images.size(0)));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int64_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto idx = torch::tensor(std::vector<int64_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                          order.begin() + static_cast<std::ptrdiff_t>(end)));
      const auto loss = torch::mse_loss(cg_forward(cg, images.index_select(0, idx)), targets.index_select(0, idx));
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw std::runtime_error("CG pretraining diverged at epoch " + std::to_string(epoch + 1));
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
      cg.bump_version();
      total += value * static_cast<double>(end - start);
      seen += static_cast<int64_t>(end - start);
    }
    losses.push_back(total / static_cast<double>(seen));
  }
  cg.set_trainable(false);
  return losses;
}

FinetuneLoss finetune_loss_terms(const torch::Tensor& processed, const torch::Tensor& clean, HashModel& model,
                                 const FinetuneWeights& weights) {
  if (processed.sizes() != clean.sizes()) {
    throw std::invalid_argument("processed batch " + c10::str(processed.sizes()) + " does not match clean batch " +
                                c10::str(clean.sizes()));
  }
  FinetuneLoss l;
  l.pixel = (processed - clean).pow(2).mean();
  torch::Tensor clean_features, clean_codes;
  {
    torch::NoGradGuard no_grad;
    clean_features = model->features(clean);
    clean_codes = torch::tanh(model->head()(clean_features));
  }
  const auto features = model->features(processed);
  l.feature = (features - clean_features).pow(2).mean();
  const auto codes = torch::tanh(model->head()(features));
  const auto k = static_cast<double>(codes.size(1));
  l.hash = ((k - (codes * clean_codes).sum(1)) / 2.0).mean();
  l.total = weights.pixel * l.pixel + weights.feature * l.feature + weights.hash * l.hash;
  return l;
}

FinetuneLoss cg_finetune_loss(CompressionGenerator& cg, const torch::Tensor& clean, const torch::Tensor& delta,
                              HashModel& model, const FinetuneWeights& weights) {
  const auto adversarial = apply_perturbation(clean, delta.detach());
  return finetune_loss_terms(cg_forward(cg, adversarial), clean, model, weights);
}

double cg_finetune_step(CompressionGenerator& cg, const torch::Tensor& clean, const torch::Tensor& delta,
                        HashModel& model, const FinetuneWeights& weights, double lr) {
  if (!(lr >= 0)) throw std::invalid_argument("fine-tuning learning rate must be >= 0");
  cg.set_trainable(true);
  auto& opt = cg.optimizer();
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  opt.zero_grad();
  const auto loss = cg_finetune_loss(cg, clean, delta, model, weights).total;
  const double value = loss.item<double>();
  loss.backward();
  for (const auto& p : cg.net()->parameters()) {
    if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>()) {
      cg.set_trainable(false);
      throw std::runtime_error("CG fine-tuning produced non-finite gradients (loss " + std::to_string(value) + ")");
    }
  }
  opt.step();
  cg.bump_version();
  cg.set_trainable(false);
  return value;
}

}  // namespace toap
