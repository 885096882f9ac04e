#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "toap/commands.hpp"
#include "toap/config.hpp"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal adversarial perturbations against deep-hash retrieval"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  app.add_option("-c,--config", config_path, "JSON experiment config (defaults when omitted)");
  app.add_option("--set", overrides, "Override a config key, e.g. --set attack.T=10 (repeatable)");
  app.add_option("--threads", threads, "Intra-op threads (0 keeps the libtorch default)");

  auto* train = app.add_subcommand("train-hash", "Train the white-box and transfer hash models, vote centers");
  auto* pretrain = app.add_subcommand("pretrain-cg", "Pretrain the compression generator on JPEG targets");
  auto* attack = app.add_subcommand("attack", "Optimize the universal perturbation");
  auto* eval = app.add_subcommand("eval", "O/A/PO/PA tables, sweeps, delta-mAP plots and the CG ablation table");
  auto* report = app.add_subcommand("report", "Summarize evaluation outputs as Markdown");

  std::string perturbation;
  std::vector<std::string> models;
  eval->add_option("--perturbation", perturbation, "Perturbation file (default: the configured attack's delta.bin)");
  eval->add_option("--model", models, "Model checkpoint to evaluate (repeatable; default: all trained models)");

  CLI11_PARSE(app, argc, argv);

  toap::ExperimentConfig cfg;
  try {
    cfg = toap::ExperimentConfig::load(config_path, overrides);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  if (threads > 0) torch::set_num_threads(threads);

  try {
    if (*train) {
      toap::cmd_train_hash(cfg, std::cout);
    } else if (*pretrain) {
      toap::cmd_pretrain_cg(cfg, std::cout);
    } else if (*attack) {
      toap::cmd_attack(cfg, std::cout);
    } else if (*eval) {
      std::optional<std::filesystem::path> p;
      if (!perturbation.empty()) p = perturbation;
      std::vector<std::filesystem::path> paths(models.begin(), models.end());
      toap::cmd_eval(cfg, p, paths, std::cout);
    } else if (*report) {
      toap::cmd_report(cfg, std::cout);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
