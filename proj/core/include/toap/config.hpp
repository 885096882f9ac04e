#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toap/attack.hpp"
#include "toap/cg.hpp"
#include "toap/hash_model.hpp"
#include "toap/postproc.hpp"

namespace toap {

/// Thrown for malformed or invalid configuration; lists every offending key.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct DataSection {
  std::filesystem::path root;
  bool synthetic = true;
  int identities = 10;  // data.P
  int per_id = 40;
  int image_size = 64;
  int train_per_id = 20;
  int test_per_id = 8;
  int min_images = 1;
  std::uint64_t seed = 0;
};

struct ModelSection {
  TrainConfig train;
  /// Independently trained black-box models (architecture, one per seed).
  std::string transfer_arch = "convB";
  std::vector<std::uint64_t> transfer_seeds = {1, 2, 3};
};

struct CentersSection {
  int sub_count = 8;
  int voters = 0;  // 0 selects ceil(P / 2)
  std::uint64_t seed = 0;
};

struct CgSection {
  CGConfig generator;
  PretrainConfig pretrain;
  GridSpec grid{0, 0};  // window 0 selects the image-size default
  std::vector<std::string> loss_terms = {"pixel", "feature", "hash"};
  FinetuneWeights lambdas;

  /// lambdas with the disabled terms zeroed.
  FinetuneWeights effective_weights() const;
};

struct Sweeps {
  std::vector<int> jpeg_quality = {90, 75, 60, 45, 30};
  std::vector<double> resize_ratio = {0.5, 0.75, 1.25, 1.5, 2.0};
  std::vector<int> blur_kernel = {3, 5, 7};
  double blur_sigma = 0.8;
  std::vector<double> rotate_degrees = {2, 5, 10, 15, 20};
  std::vector<double> noise_sigma = {0.01, 0.02, 0.04472, 0.06, 0.08};
};

struct EvalSection {
  std::vector<PostProcOp> ops = default_ops();
  int k = 300;
  Sweeps sweeps;
  /// Grid modes compared by the ablation table; each entry is an attack.use_cg value.
  std::vector<std::string> ablation_modes = {"local", "global", "local+global"};
};

struct ExperimentConfig {
  DataSection data;
  ModelSection model;
  CentersSection centers;
  CgSection cg;
  AttackConfig attack;
  EvalSection eval;
  std::filesystem::path run_dir = "runs/default";

  /// Defaults as a JSON document (also the schema for unknown-key checks).
  nlohmann::json to_json() const;
  /// Rejects unknown keys and invalid values; relative paths resolve against base_dir.
  static ExperimentConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

  /// Reads a JSON file (empty path = defaults) and applies `key=value` overrides
  /// (value parsed as JSON when possible, else taken as a string).
  static ExperimentConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

  /// FNV-1a 64 of the canonical JSON dump, hex.
  std::string hash() const;
  /// The attack config with the grid and CG loss terms folded in.
  AttackConfig attack_config() const;
  GridSpec grid() const;
};

/// FNV-1a 64-bit.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace toap
