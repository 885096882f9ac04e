#include "toap/commands.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <torch/torch.h>
#include <torch/version.h>

#include "toap/attack.hpp"
#include "toap/centers.hpp"
#include "toap/cg.hpp"
#include "toap/image_io.hpp"
#include "toap/plot.hpp"
#include "toap/retrieval.hpp"
#include "toap/tensor_container.hpp"

namespace toap {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kToolVersion = "1.0.0";

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_manifest(const fs::path& path, const std::string& command, const ExperimentConfig& cfg, json extra) {
  json m = {{"command", command},
            {"config_hash", cfg.hash()},
            {"config", cfg.to_json()},
            {"seeds",
             {{"data", cfg.data.seed},
              {"model", cfg.model.train.seed},
              {"transfer", cfg.model.transfer_seeds},
              {"centers", cfg.centers.seed},
              {"cg", cfg.cg.generator.seed},
              {"attack", cfg.attack.seed}}},
            {"versions", {{"toap", kToolVersion}, {"libtorch", TORCH_VERSION}}}};
  m.update(extra);
  write_file_atomic(path, m.dump(2) + "\n");
}

void require_file(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw std::runtime_error("missing " + path.string() + " (" + hint + ")");
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct SweepPoint {
  std::string kind;
  double param;
  PostProcOp op;
};

std::vector<SweepPoint> sweep_points(const Sweeps& s) {
  std::vector<SweepPoint> out;
  for (const int q : s.jpeg_quality) out.push_back({"jpeg", double(q), JpegOp{q}});
  for (const double r : s.resize_ratio) out.push_back({"resize", r, ResizeOp{r}});
  for (const int k : s.blur_kernel) out.push_back({"blur", double(k), BlurOp{k, s.blur_sigma}});
  for (const double d : s.rotate_degrees) out.push_back({"rotate", d, RotateOp{d}});
  for (const double n : s.noise_sigma) out.push_back({"noise", n, NoiseOp{n, 0}});
  return out;
}

const char* sweep_axis(const std::string& kind) {
  if (kind == "jpeg") return "JPEG quality";
  if (kind == "resize") return "resize ratio";
  if (kind == "blur") return "blur kernel size";
  if (kind == "rotate") return "rotation (degrees)";
  return "noise sigma";
}

json report_json(const EvalReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"op", row.op}, {"original", row.original}, {"adversarial", row.adversarial}});
  }
  return {{"model", r.model_id}, {"k", r.k}, {"queries", r.queries}, {"database", r.database}, {"rows", rows}};
}

}  // namespace

fs::path RunLayout::transfer_model(const std::string& arch, std::uint64_t seed) const {
  return root / "models" / ("transfer_" + arch + "_s" + std::to_string(seed) + ".ckpt");
}

fs::path RunLayout::attack_dir(CgMode mode) const { return root / ("attack-" + to_string(mode)); }

DatasetSplits build_splits(const DataSection& data) {
  std::vector<ImageSample> samples;
  if (data.synthetic) {
    samples = generate_synthetic(data.identities, data.per_id, data.image_size, data.seed);
  } else {
    if (!fs::is_directory(data.root)) throw std::runtime_error("dataset root not found: " + data.root.string());
    samples = load_dataset(data.root, data.image_size, data.min_images);
  }
  return make_splits(samples, data.train_per_id, data.test_per_id, data.seed);
}

fs::path cmd_train_hash(const ExperimentConfig& cfg, std::ostream& log) {
  const RunLayout layout{cfg.run_dir};
  Stopwatch clock;
  const auto splits = build_splits(cfg.data);
  log << "dataset: " << splits.identities << " identities, " << splits.train.size() << " train / "
      << splits.test.size() << " test / " << splits.database.size() << " database images\n";

  auto train_one = [&](const TrainConfig& tc, const fs::path& path) {
    TrainLog tl;
    auto model = train_hash_model(splits.train, tc, &tl);
    save_hash_model(model, tc, path);
    const auto report = evaluate_protocol(model, splits, std::nullopt, {}, cfg.eval.k, path.stem().string());
    log << "trained " << tc.arch << " (seed " << tc.seed << "): loss " << fixed(tl.epoch_loss.front()) << " -> "
        << fixed(tl.epoch_loss.back()) << ", O = " << fixed(report.O()) << " -> " << path.string() << "\n";
    return std::pair{std::move(model), report.O()};
  };

  auto [model, o] = train_one(cfg.model.train, layout.model());
  json transfer = json::array();
  for (const auto seed : cfg.model.transfer_seeds) {
    TrainConfig tc = cfg.model.train;
    tc.arch = cfg.model.transfer_arch;
    tc.seed = seed;
    const auto path = layout.transfer_model(tc.arch, seed);
    transfer.push_back({{"path", path.string()}, {"O", train_one(tc, path).second}});
  }

  const auto labels = labels_of(splits.train);
  const auto codes = encode(model, stack_pixels(splits.train));
  const auto centers = build_center_set(codes, labels, splits.identities, cfg.centers.sub_count,
                                        cfg.centers.voters, cfg.centers.seed);
  save_center_set(centers, layout.centers());
  log << "centers: " << centers.identities() << " cluster, " << centers.sub_centers.size(0) << " sub ("
      << centers.memberships.front().size() << " voters each) -> " << layout.centers().string() << "\n";

  write_manifest(layout.root / "manifest_train_hash.json", "train-hash", cfg,
                 {{"outputs", {{"model", layout.model().string()}, {"centers", layout.centers().string()}}},
                  {"whitebox", {{"arch_id", model->arch()}, {"K", model->code_bits()}, {"O", o}}},
                  {"transfer", transfer},
                  {"seconds", clock.seconds()}});
  return layout.model();
}

fs::path cmd_pretrain_cg(const ExperimentConfig& cfg, std::ostream& log) {
  const RunLayout layout{cfg.run_dir};
  Stopwatch clock;
  const auto splits = build_splits(cfg.data);
  CompressionGenerator cg(cfg.cg.generator);
  auto pc = cfg.cg.pretrain;
  pc.seed = cfg.cg.generator.seed;
  const auto losses = pretrain_cg(cg, stack_pixels(splits.train), cfg.cg.generator.quality, pc);

  const auto held_out = stack_pixels(splits.test);
  double cg_mse = 0, identity_mse = 0;
  {
    torch::NoGradGuard no_grad;
    const auto target = diff_jpeg(held_out, cfg.cg.generator.quality);
    cg_mse = torch::mse_loss(cg_forward(cg, held_out), target).item<double>();
    identity_mse = torch::mse_loss(held_out, target).item<double>();
  }
  cg.save(layout.cg(), cfg.grid());
  log << "pretrained CG (quality " << cg.quality() << ", " << losses.size() << " epochs): held-out MSE to JPEG "
      << std::scientific << std::setprecision(3) << cg_mse << " vs identity " << identity_mse << std::defaultfloat
      << " -> " << layout.cg().string() << "\n";
  write_manifest(layout.root / "manifest_pretrain_cg.json", "pretrain-cg", cfg,
                 {{"outputs", {{"cg", layout.cg().string()}}},
                  {"epoch_loss", losses},
                  {"heldout_mse", {{"cg", cg_mse}, {"identity", identity_mse}}},
                  {"seconds", clock.seconds()}});
  return layout.cg();
}

AttackOutputs cmd_attack(const ExperimentConfig& cfg, std::ostream& log) {
  const RunLayout layout{cfg.run_dir};
  require_file(layout.model(), "run train-hash first");
  require_file(layout.centers(), "run train-hash first");
  Stopwatch clock;
  const auto splits = build_splits(cfg.data);
  auto model = load_hash_model(layout.model());
  const auto centers = load_center_set(layout.centers());
  if (!fs::exists(layout.cg())) {
    log << "no pretrained CG found, pretraining now\n";
    cmd_pretrain_cg(cfg, log);
  }
  auto cg = CompressionGenerator::load(layout.cg());
  const auto version_before = cg.version();
  const auto acfg = cfg.attack_config();
  log << "attack: T=" << acfg.epochs << " eta=" << acfg.eta << " eps=" << acfg.epsilon << " objective="
      << to_string(acfg.objective) << " use_cg=" << to_string(acfg.use_cg) << "\n";

  const auto result = run_toap(splits, model, cg, centers, acfg, [&](const EpochRecord& r) {
    log << "  epoch " << r.epoch << "/" << acfg.epochs << "  L_AP " << fixed(r.loss_ap) << "  mAP_t "
        << fixed(r.map_t) << (r.gate_fired ? "  gate fired" : "") << "  (" << fixed(clock.seconds(), 1) << " s)\n";
  });

  const auto dir = layout.attack_dir(acfg.use_cg);
  AttackOutputs out{dir / "delta.bin", dir / "history.csv", dir / "preview.png"};
  save_perturbation(result.perturbation, out.perturbation);
  write_file_atomic(out.history, history_csv(result.history));
  cg.save(dir / "cg_final.ckpt", acfg.grid);

  const auto test_images = stack_pixels(splits.test);
  const auto count = std::min<int64_t>(8, test_images.size(0));
  const auto clean = test_images.index_select(
      0, torch::linspace(0, static_cast<double>(test_images.size(0) - 1), count).round().to(torch::kInt64));
  const auto adversarial = apply_perturbation(clean, result.perturbation.delta);
  torch::Tensor processed;
  {
    torch::NoGradGuard no_grad;
    processed = cg_local_global(cg, adversarial, acfg.grid);
  }
  const std::vector<torch::Tensor> rows = {clean, adversarial, processed};
  write_png(out.preview, tile_rows(rows));

  const auto report = evaluate_protocol(model, splits, result.perturbation.delta, {}, cfg.eval.k, "whitebox");
  log << "done: O " << fixed(report.O()) << "  A " << fixed(report.A()) << "  max|delta| "
      << result.perturbation.max_abs() << " -> " << out.perturbation.string() << "\n";
  write_manifest(dir / "manifest.json", "attack", cfg,
                 {{"outputs",
                   {{"perturbation", out.perturbation.string()},
                    {"history", out.history.string()},
                    {"preview", out.preview.string()}}},
                  {"O", report.O()},
                  {"A", report.A()},
                  {"max_abs_delta", result.perturbation.max_abs()},
                  {"budget_checks", result.budget_checks},
                  {"peak_abs_delta", result.peak_abs_delta},
                  {"cg_version", {{"before", version_before}, {"after", cg.version()}}},
                  {"seconds", clock.seconds()}});
  return out;
}

std::vector<fs::path> cmd_eval(const ExperimentConfig& cfg, const std::optional<fs::path>& perturbation,
                               const std::vector<fs::path>& models, std::ostream& log) {
  const RunLayout layout{cfg.run_dir};
  Stopwatch clock;
  const auto delta_path = perturbation.value_or(layout.attack_dir(cfg.attack.use_cg) / "delta.bin");
  require_file(delta_path, "run attack first or pass --perturbation");
  const auto delta = load_perturbation(delta_path).delta;
  if (delta.size(1) != cfg.data.image_size || delta.size(2) != cfg.data.image_size) {
    throw std::invalid_argument("perturbation is " + c10::str(delta.sizes()) + " but data.image_size is " +
                                std::to_string(cfg.data.image_size));
  }

  std::vector<fs::path> model_paths = models;
  if (model_paths.empty()) {
    require_file(layout.model(), "run train-hash first");
    model_paths.push_back(layout.model());
    for (const auto seed : cfg.model.transfer_seeds) {
      const auto p = layout.transfer_model(cfg.model.transfer_arch, seed);
      if (fs::exists(p)) model_paths.push_back(p);
    }
  }

  const auto splits = build_splits(cfg.data);
  const auto dir = layout.eval_dir();
  const auto points = sweep_points(cfg.eval.sweeps);
  std::vector<PostProcOp> sweep_ops;
  for (const auto& p : points) sweep_ops.push_back(p.op);

  std::vector<fs::path> written;
  json summary = json::array();
  std::map<std::string, std::vector<PlotSeries>> plots;
  for (const auto& path : model_paths) {
    require_file(path, "model checkpoint");
    auto model = load_hash_model(path);
    const auto id = path.stem().string();
    const auto report = evaluate_protocol(model, splits, delta, cfg.eval.ops, cfg.eval.k, id);
    const auto csv = dir / ("report_" + id + ".csv");
    write_report_csv(report, csv);
    written.push_back(csv);
    summary.push_back(report_json(report));
    log << id << ": O " << fixed(report.O()) << "  A " << fixed(report.A());
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
      log << "  | " << report.rows[i].op << " PO " << fixed(report.rows[i].original) << " PA "
          << fixed(report.rows[i].adversarial);
    }
    log << "\n";

    const auto sweep = evaluate_protocol(model, splits, delta, sweep_ops, cfg.eval.k, id);
    std::ostringstream s;
    s << "op,kind,param,PO,PA,dmAP\n" << std::fixed << std::setprecision(6);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& row = sweep.rows[i + 1];
      s << row.op << "," << points[i].kind << "," << points[i].param << "," << row.original << ","
        << row.adversarial << "," << row.delta() << "\n";
      auto& series = plots[points[i].kind];
      if (series.empty() || series.back().name != id) series.push_back({id, {}, {}});
      series.back().x.push_back(points[i].param);
      series.back().y.push_back(row.delta());
    }
    const auto sweep_csv = dir / ("sweep_" + id + ".csv");
    write_file_atomic(sweep_csv, s.str());
    written.push_back(sweep_csv);
  }
  for (const auto& [kind, series] : plots) {
    const auto png = dir / "plots" / ("dmap_" + kind + ".png");
    write_line_plot(png, "delta mAP under " + kind, sweep_axis(kind), "PO - PA", series);
    written.push_back(png);
  }

  // CG ablation on the white-box model: one row per attack directory that exists.
  json ablation = json::array();
  {
    auto model = load_hash_model(model_paths.front());
    std::ostringstream s;
    s << "use_cg,A";
    for (const auto& op : cfg.eval.ops) s << ",PA_" << to_string(op);
    s << ",mean_PA\n" << std::fixed << std::setprecision(6);
    for (const auto& name : cfg.eval.ablation_modes) {
      const auto p = layout.attack_dir(parse_cg_mode(name)) / "delta.bin";
      if (!fs::exists(p)) continue;
      const auto r = evaluate_protocol(model, splits, load_perturbation(p).delta, cfg.eval.ops, cfg.eval.k, name);
      double mean = 0;
      s << name << "," << r.A();
      for (std::size_t i = 1; i < r.rows.size(); ++i) {
        s << "," << r.rows[i].adversarial;
        mean += r.rows[i].adversarial;
      }
      mean /= static_cast<double>(std::max<std::size_t>(1, r.rows.size() - 1));
      s << "," << mean << "\n";
      ablation.push_back({{"use_cg", name}, {"A", r.A()}, {"mean_PA", mean}});
      log << "ablation " << name << ": A " << fixed(r.A()) << "  mean PA " << fixed(mean) << "\n";
    }
    if (!ablation.empty()) {
      write_file_atomic(dir / "ablation.csv", s.str());
      written.push_back(dir / "ablation.csv");
    }
  }

  write_file_atomic(dir / "summary.json",
                    json{{"perturbation", delta_path.string()}, {"reports", summary}, {"ablation", ablation}}.dump(2) +
                        "\n");
  write_manifest(dir / "manifest.json", "eval", cfg,
                 {{"perturbation", delta_path.string()}, {"outputs", written}, {"seconds", clock.seconds()}});
  return written;
}

fs::path cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
  const RunLayout layout{cfg.run_dir};
  const auto summary_path = layout.eval_dir() / "summary.json";
  require_file(summary_path, "run eval first");
  const auto summary = json::parse(read_text_file(summary_path));

  std::ostringstream md;
  md << "# Evaluation report\n\nPerturbation: `" << summary.at("perturbation").get<std::string>() << "`\n\n";
  for (const auto& r : summary.at("reports")) {
    const auto& rows = r.at("rows");
    md << "## " << r.at("model").get<std::string>() << "\n\n"
       << "top-k " << r.at("k") << ", " << r.at("queries") << " queries, " << r.at("database")
       << " database images\n\n| op | original | adversarial | delta |\n|---|---|---|---|\n";
    for (const auto& row : rows) {
      const double o = row.at("original"), a = row.at("adversarial");
      md << "| " << row.at("op").get<std::string>() << " | " << fixed(o) << " | " << fixed(a) << " | "
         << fixed(o - a) << " |\n";
    }
    md << "\n";
  }
  if (!summary.at("ablation").empty()) {
    md << "## CG ablation (white-box)\n\n| use_cg | A | mean PA |\n|---|---|---|\n";
    for (const auto& a : summary.at("ablation")) {
      md << "| " << a.at("use_cg").get<std::string>() << " | " << fixed(a.at("A").get<double>()) << " | "
         << fixed(a.at("mean_PA").get<double>()) << " |\n";
    }
  }
  const auto out = layout.root / "report.md";
  write_file_atomic(out, md.str());
  log << "report -> " << out.string() << "\n";
  return out;
}

}  // namespace toap
