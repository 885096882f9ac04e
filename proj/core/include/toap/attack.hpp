#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "toap/centers.hpp"
#include "toap/cg.hpp"
#include "toap/dataset.hpp"
#include "toap/hash_model.hpp"

namespace toap {

inline constexpr double kDefaultEpsilon = 16.0 / 255.0;

/// Universal additive field shared by every image.
struct Perturbation {
  torch::Tensor delta;  // [3, H, W]
  double epsilon = kDefaultEpsilon;

  static Perturbation zeros(int64_t height, int64_t width, double epsilon = kDefaultEpsilon);
  double max_abs() const;
};

void save_perturbation(const Perturbation& p, const std::filesystem::path& path);
Perturbation load_perturbation(const std::filesystem::path& path);

/// Which center family supplies the per-image targets.
enum class TargetKind { Cluster, Subspace, Overall };
std::string to_string(TargetKind kind);

/// First family drives the meta-train step, the optional second one the
/// meta-test step. A single family gives a plain signed-gradient step.
struct Objective {
  TargetKind train = TargetKind::Cluster;
  std::optional<TargetKind> test = TargetKind::Subspace;
};

/// "cluster", "subspace", "overall" or two of them joined by '+', e.g. "cluster+subspace".
Objective parse_objective(std::string_view text);
std::string to_string(const Objective& objective);

struct AttackConfig {
  int epochs = 100;
  double eta = 0.02;
  double epsilon = kDefaultEpsilon;
  double alpha = 0.3;
  double beta = 0.7;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// window 0 selects GridSpec::default_for(image size).
  GridSpec grid{0, 0};
  int gate_k = 300;
  Objective objective;
  CgMode use_cg = CgMode::LocalGlobal;
  bool finetune_cg = true;
  double cg_lr = 1e-4;
  FinetuneWeights weights;

  void validate() const;
  GridSpec grid_for(int64_t image_size) const;
};

enum class Phase { Train, Test };

/// Per-image [B, K] targets of one family. Subspace: a sub center drawn
/// uniformly from those whose membership holds the image's cluster, else the
/// sub center nearest in Hamming distance to that cluster center (lowest index on ties).
torch::Tensor assign_targets(std::span<const int> labels, const CenterSet& centers, TargetKind kind,
                             std::mt19937_64& rng);

/// Train -> cluster centers, Test -> sub centers.
torch::Tensor assign_meta_centers(std::span<const int> labels, const CenterSet& centers, Phase phase,
                                  std::mt19937_64& rng);

/// alpha * mean (K - h . tanh(H(x'))) / 2 + beta * mean (K - h . tanh(H(CG(x')))) / 2
/// with x' = clip(x + delta, 0, 1). With mode None the generator is the
/// identity and both weights apply to x'.
torch::Tensor loss_ap(HashModel& model, CompressionGenerator& cg, const torch::Tensor& images,
                      const torch::Tensor& delta, const torch::Tensor& targets, double alpha, double beta,
                      CgMode mode, const GridSpec& grid);

struct MetaStepResult {
  torch::Tensor delta;
  double train_loss = 0;
  double test_loss = 0;
};

/// grad1 at delta on train targets; delta' = clip(delta + eps * sign(grad1));
/// grad2 at delta' on test targets (0 without test targets);
/// returns clip(delta + eta * sign(grad1 + grad2)).
MetaStepResult meta_step(const torch::Tensor& delta, HashModel& model, CompressionGenerator& cg,
                         const torch::Tensor& images, const torch::Tensor& train_targets,
                         const std::optional<torch::Tensor>& test_targets, const AttackConfig& cfg,
                         const GridSpec& grid);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss_ap = 0;
  double map_t = 0;
  double map_best = 0;
  bool gate_fired = false;
  std::uint64_t cg_version = 0;
  double max_abs_delta = 0;
};

struct AttackResult {
  Perturbation perturbation;
  std::vector<EpochRecord> history;
  /// Number of budget checks (one per update) and the largest |delta| observed.
  int64_t budget_checks = 0;
  double peak_abs_delta = 0;
};

using EpochObserver = std::function<void(const EpochRecord&)>;

/// Shuffle seed of epoch t (1-based): cfg.seed + t, std::mt19937_64 + std::shuffle.
std::vector<int64_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch);

/// The alternating loop: one meta_step per shuffled mini-batch, then the
/// training-set mAP gate; when it improves on the best so far the generator is
/// fine-tuned for one pass over the same batches.
AttackResult run_toap(const torch::Tensor& train_images, std::span<const int> train_labels,
                      const torch::Tensor& db_images, std::span<const int> db_labels, HashModel& model,
                      CompressionGenerator& cg, const CenterSet& centers, const AttackConfig& cfg,
                      const EpochObserver& observer = {});

AttackResult run_toap(const DatasetSplits& splits, HashModel& model, CompressionGenerator& cg,
                      const CenterSet& centers, const AttackConfig& cfg, const EpochObserver& observer = {});

inline constexpr const char* kHistoryCsvHeader = "epoch,L_AP,mAP_t,mAP_best,gate_fired";
std::string history_csv(std::span<const EpochRecord> history);

}  // namespace toap
