#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "toap/config.hpp"
#include "toap/dataset.hpp"

namespace toap {

/// Locations inside a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path model() const { return root / "models" / "whitebox.ckpt"; }
  std::filesystem::path transfer_model(const std::string& arch, std::uint64_t seed) const;
  std::filesystem::path centers() const { return root / "centers.bin"; }
  std::filesystem::path cg() const { return root / "cg" / "pretrained.ckpt"; }
  /// One directory per attack.use_cg value, e.g. "attack-local+global".
  std::filesystem::path attack_dir(CgMode mode) const;
  std::filesystem::path eval_dir() const { return root / "eval"; }
};

/// Synthetic corpus or directory tree, then the seeded split.
DatasetSplits build_splits(const DataSection& data);

/// Trains the white-box model and every transfer model, votes the centers.
/// Returns the white-box checkpoint path.
std::filesystem::path cmd_train_hash(const ExperimentConfig& cfg, std::ostream& log);

/// Pretrains the compression generator on the training split.
std::filesystem::path cmd_pretrain_cg(const ExperimentConfig& cfg, std::ostream& log);

struct AttackOutputs {
  std::filesystem::path perturbation;
  std::filesystem::path history;
  std::filesystem::path preview;
};

/// Pretrains the generator when no checkpoint exists, runs the attack and writes
/// the perturbation, the per-epoch history and a preview grid.
AttackOutputs cmd_attack(const ExperimentConfig& cfg, std::ostream& log);

/// Evaluates a perturbation (default: the one of the configured attack.use_cg)
/// on the given checkpoints (default: white-box and transfer models). Writes a
/// report CSV per model, sweep CSVs, delta-mAP plots and the CG ablation table.
std::vector<std::filesystem::path> cmd_eval(const ExperimentConfig& cfg,
                                            const std::optional<std::filesystem::path>& perturbation,
                                            const std::vector<std::filesystem::path>& models, std::ostream& log);

/// Collects the evaluation CSVs into a Markdown summary.
std::filesystem::path cmd_report(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace toap
