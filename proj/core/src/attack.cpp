#include "toap/attack.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "toap/retrieval.hpp"
#include "toap/tensor_container.hpp"

namespace toap {
namespace {

constexpr double kBudgetSlack = 1e-8;

TargetKind parse_kind(std::string_view text) {
  if (text == "cluster") return TargetKind::Cluster;
  if (text == "subspace") return TargetKind::Subspace;
  if (text == "overall") return TargetKind::Overall;
  throw std::invalid_argument("unknown objective '" + std::string(text) + "' (expected cluster, subspace, overall)");
}

void check_finite(const torch::Tensor& grad, const char* which) {
  if (!torch::isfinite(grad).all().item<bool>()) {
    throw std::runtime_error(std::string("non-finite ") + which + " gradient in meta step");
  }
}

torch::Tensor gradient_at(const torch::Tensor& point, HashModel& model, CompressionGenerator& cg,
                          const torch::Tensor& images, const torch::Tensor& targets, const AttackConfig& cfg,
                          const GridSpec& grid, double* loss_value) {
  auto var = point.detach().clone().requires_grad_(true);
  const auto loss = loss_ap(model, cg, images, var, targets, cfg.alpha, cfg.beta, cfg.use_cg, grid);
  *loss_value = loss.item<double>();
  return torch::autograd::grad({loss}, {var})[0];
}

}  // namespace

Perturbation Perturbation::zeros(int64_t height, int64_t width, double epsilon) {
  return {torch::zeros({3, height, width}), epsilon};
}

double Perturbation::max_abs() const { return delta.abs().max().item<double>(); }

void save_perturbation(const Perturbation& p, const std::filesystem::path& path) {
  TensorContainer c;
  c.add("delta", p.delta);
  c.save(path);
  auto meta = path;
  meta += ".json";
  write_file_atomic(meta, nlohmann::json{{"kind", "perturbation"},
                                         {"epsilon", p.epsilon},
                                         {"max_abs", p.max_abs()},
                                         {"shape", p.delta.sizes().vec()}}
                              .dump(2) + "\n");
}

Perturbation load_perturbation(const std::filesystem::path& path) {
  Perturbation p;
  p.delta = TensorContainer::load(path).at("delta");
  if (p.delta.dim() != 3 || p.delta.size(0) != 3) {
    throw std::invalid_argument(path.string() + ": perturbation must be [3, H, W], got " + c10::str(p.delta.sizes()));
  }
  auto meta = path;
  meta += ".json";
  if (std::filesystem::exists(meta)) p.epsilon = nlohmann::json::parse(read_text_file(meta)).at("epsilon").get<double>();
  return p;
}

std::string to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::Cluster: return "cluster";
    case TargetKind::Subspace: return "subspace";
    case TargetKind::Overall: return "overall";
  }
  return "?";
}

Objective parse_objective(std::string_view text) {
  const auto plus = text.find('+');
  Objective o;
  o.train = parse_kind(text.substr(0, plus));
  if (plus == std::string_view::npos) {
    o.test.reset();
    return o;
  }
  o.test = parse_kind(text.substr(plus + 1));
  if (*o.test == o.train) throw std::invalid_argument("objective '" + std::string(text) + "' repeats a center family");
  return o;
}

std::string to_string(const Objective& objective) {
  auto s = to_string(objective.train);
  if (objective.test) s += "+" + to_string(*objective.test);
  return s;
}

void AttackConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("attack.epochs must be >= 1");
  if (!(eta >= 0)) throw std::invalid_argument("attack.eta must be >= 0");
  if (!(epsilon > 0)) throw std::invalid_argument("attack.epsilon must be > 0");
  if (!(alpha >= 0) || !(beta >= 0)) throw std::invalid_argument("attack.alpha and attack.beta must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("attack.batch_size must be >= 1");
  if (gate_k < 1) throw std::invalid_argument("attack.gate_k must be >= 1");
  if (!(cg_lr >= 0)) throw std::invalid_argument("attack.cg_lr must be >= 0");
}

GridSpec AttackConfig::grid_for(int64_t image_size) const {
  return grid.window == 0 ? GridSpec::default_for(image_size) : grid;
}

torch::Tensor assign_targets(std::span<const int> labels, const CenterSet& centers, TargetKind kind,
                             std::mt19937_64& rng) {
  const int p = centers.identities();
  std::vector<int64_t> rows;
  rows.reserve(labels.size());
  for (const int label : labels) {
    if (label < 0 || label >= p) throw std::invalid_argument("label " + std::to_string(label) + " has no center");
  }
  switch (kind) {
    case TargetKind::Cluster:
      for (const int label : labels) rows.push_back(label);
      return centers.cluster_centers.index_select(0, torch::tensor(rows));
    case TargetKind::Overall:
      return centers.overall.unsqueeze(0).expand({static_cast<int64_t>(labels.size()), -1}).contiguous();
    case TargetKind::Subspace: break;
  }
  const auto count = centers.sub_centers.size(0);
  if (count == 0) throw std::invalid_argument("center set has no sub centers");
  const auto dist = hamming_matrix(centers.cluster_centers, centers.sub_centers).contiguous();
  const auto* d = dist.data_ptr<double>();
  for (const int label : labels) {
    std::vector<int64_t> holders;
    for (int64_t s = 0; s < count; ++s) {
      const auto& m = centers.memberships[static_cast<std::size_t>(s)];
      if (std::binary_search(m.begin(), m.end(), label)) holders.push_back(s);
    }
    if (!holders.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, holders.size() - 1);
      rows.push_back(holders[pick(rng)]);
      continue;
    }
    const double* row = d + static_cast<std::ptrdiff_t>(label) * count;
    rows.push_back(std::min_element(row, row + count) - row);
  }
  return centers.sub_centers.index_select(0, torch::tensor(rows));
}

torch::Tensor assign_meta_centers(std::span<const int> labels, const CenterSet& centers, Phase phase,
                                  std::mt19937_64& rng) {
  return assign_targets(labels, centers, phase == Phase::Train ? TargetKind::Cluster : TargetKind::Subspace, rng);
}

torch::Tensor loss_ap(HashModel& model, CompressionGenerator& cg, const torch::Tensor& images,
                      const torch::Tensor& delta, const torch::Tensor& targets, double alpha, double beta,
                      CgMode mode, const GridSpec& grid) {
  if (targets.dim() != 2 || targets.size(0) != images.size(0)) {
    throw std::invalid_argument("targets " + c10::str(targets.sizes()) + " do not match batch " +
                                c10::str(images.sizes()));
  }
  const auto k = static_cast<double>(targets.size(1));
  const auto h = targets.to(images.scalar_type());
  auto distance = [&](const torch::Tensor& x) {
    return ((k - (h * model->forward_continuous(x)).sum(1)) / 2.0).mean();
  };
  const auto adversarial = (images + delta.unsqueeze(0)).clamp(0.0, 1.0);
  if (mode == CgMode::None) return (alpha + beta) * distance(adversarial);
  auto loss = torch::zeros({}, images.options());
  if (alpha > 0) loss = loss + alpha * distance(adversarial);
  if (beta > 0) loss = loss + beta * distance(apply_cg(cg, adversarial, mode, grid));
  return loss;
}

MetaStepResult meta_step(const torch::Tensor& delta, HashModel& model, CompressionGenerator& cg,
                         const torch::Tensor& images, const torch::Tensor& train_targets,
                         const std::optional<torch::Tensor>& test_targets, const AttackConfig& cfg,
                         const GridSpec& grid) {
  MetaStepResult r;
  const auto grad1 = gradient_at(delta, model, cg, images, train_targets, cfg, grid, &r.train_loss);
  check_finite(grad1, "meta-train");
  auto direction = grad1;
  if (test_targets) {
    const auto virtual_delta = (delta + cfg.epsilon * torch::sign(grad1)).clamp(-cfg.epsilon, cfg.epsilon);
    const auto grad2 = gradient_at(virtual_delta, model, cg, images, *test_targets, cfg, grid, &r.test_loss);
    check_finite(grad2, "meta-test");
    direction = grad1 + grad2;
  }
  r.delta = (delta + cfg.eta * torch::sign(direction)).clamp(-cfg.epsilon, cfg.epsilon).detach();
  return r;
}

std::vector<int64_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch) {
  std::vector<int64_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

AttackResult run_toap(const torch::Tensor& train_images, std::span<const int> train_labels,
                      const torch::Tensor& db_images, std::span<const int> db_labels, HashModel& model,
                      CompressionGenerator& cg, const CenterSet& centers, const AttackConfig& cfg,
                      const EpochObserver& observer) {
  cfg.validate();
  if (train_images.dim() != 4 || train_images.size(0) == 0) throw std::invalid_argument("attack needs training images");
  if (static_cast<int64_t>(train_labels.size()) != train_images.size(0)) {
    throw std::invalid_argument("training labels are not aligned with images");
  }
  const auto h = train_images.size(2), w = train_images.size(3);
  const auto grid = cfg.grid_for(h);
  if (cfg.use_cg != CgMode::None && cfg.use_cg != CgMode::Global) grid.validate(h, w);
  model->freeze();
  cg.set_trainable(false);

  AttackResult result;
  result.perturbation = Perturbation::zeros(h, w, cfg.epsilon);
  auto& delta = result.perturbation.delta;
  const auto db_codes = encode(model, db_images);
  const int gate_k = static_cast<int>(std::min<int64_t>(cfg.gate_k, db_images.size(0)));
  const bool can_finetune = cfg.finetune_cg && cfg.use_cg != CgMode::None &&
                            (cfg.weights.pixel > 0 || cfg.weights.feature > 0 || cfg.weights.hash > 0);
  double best = 1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(train_labels.size(), cfg.seed, epoch);
    std::mt19937_64 target_rng((cfg.seed + static_cast<std::uint64_t>(epoch)) * 0x9E3779B97F4A7C15ULL + 1);
    std::vector<torch::Tensor> batches;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<int64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> labels;
      for (const auto i : idx) labels.push_back(train_labels[static_cast<std::size_t>(i)]);
      const auto batch = train_images.index_select(0, torch::tensor(idx));
      batches.push_back(batch);

      const auto train_targets = assign_targets(labels, centers, cfg.objective.train, target_rng);
      std::optional<torch::Tensor> test_targets;
      if (cfg.objective.test) test_targets = assign_targets(labels, centers, *cfg.objective.test, target_rng);

      MetaStepResult step;
      try {
        step = meta_step(delta, model, cg, batch, train_targets, test_targets, cfg, grid);
      } catch (const std::exception& e) {
        throw std::runtime_error("epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(start / static_cast<std::size_t>(cfg.batch_size)) + ": " + e.what());
      }
      if (!std::isfinite(step.train_loss)) {
        throw std::runtime_error("non-finite attack loss at epoch " + std::to_string(epoch));
      }
      delta = step.delta;
      const double peak = delta.abs().max().item<double>();
      ++result.budget_checks;
      result.peak_abs_delta = std::max(result.peak_abs_delta, peak);
      if (peak > cfg.epsilon + kBudgetSlack) {
        throw std::logic_error("perturbation budget violated at epoch " + std::to_string(epoch) + ": " +
                               std::to_string(peak) + " > " + std::to_string(cfg.epsilon));
      }
      loss_sum += step.train_loss * static_cast<double>(end - start);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_ap = loss_sum / static_cast<double>(order.size());
    rec.map_t = mean_average_precision(encode(model, apply_perturbation(train_images, delta)), train_labels, db_codes,
                                       db_labels, gate_k);
    if (rec.map_t < best) {
      rec.gate_fired = true;
      best = rec.map_t;
      if (can_finetune) {
        for (const auto& batch : batches) cg_finetune_step(cg, batch, delta, model, cfg.weights, cfg.cg_lr);
      }
    }
    rec.map_best = best;
    rec.cg_version = cg.version();
    rec.max_abs_delta = delta.abs().max().item<double>();
    result.history.push_back(rec);
    if (observer) observer(rec);
  }
  return result;
}

AttackResult run_toap(const DatasetSplits& splits, HashModel& model, CompressionGenerator& cg,
                      const CenterSet& centers, const AttackConfig& cfg, const EpochObserver& observer) {
  const auto train_labels = labels_of(splits.train);
  const auto db_labels = labels_of(splits.database);
  return run_toap(stack_pixels(splits.train), train_labels, stack_pixels(splits.database), db_labels, model, cg,
                  centers, cfg, observer);
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream out;
  out << kHistoryCsvHeader << "\n" << std::setprecision(6) << std::fixed;
  for (const auto& r : history) {
    out << r.epoch << "," << r.loss_ap << "," << r.map_t << "," << r.map_best << "," << (r.gate_fired ? 1 : 0)
        << "\n";
  }
  return out.str();
}

}  // namespace toap
