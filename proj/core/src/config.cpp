#include "toap/config.hpp"

#include <cstdio>
#include <sstream>

#include "toap/tensor_container.hpp"

namespace toap {
namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

void find_unknown(const json& doc, const json& schema, const std::string& prefix, std::vector<std::string>& out) {
  if (!doc.is_object()) {
    out.push_back((prefix.empty() ? std::string("<root>") : prefix) + ": expected an object");
    return;
  }
  for (const auto& [key, value] : doc.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) {
      out.push_back("unknown key '" + path + "'");
    } else if (schema.at(key).is_object()) {
      find_unknown(value, schema.at(key), path, out);
    }
  }
}

// Reads doc at a dotted path; type errors are collected instead of thrown.
class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  template <class T>
  void read(const std::string& path, T& out) {
    const json* node = &doc_;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      node = &node->at(path.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    try {
      out = node->get<T>();
    } catch (const json::exception&) {
      problems.push_back("key '" + path + "' has the wrong type (got " + node->dump() + ")");
    }
  }

  void check(bool ok, const std::string& message) {
    if (!ok) problems.push_back(message);
  }

  std::vector<std::string> problems;

 private:
  const json& doc_;
};

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument("invalid configuration:\n  " + join(problems, "\n  ")), problems_(std::move(problems)) {}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

FinetuneWeights CgSection::effective_weights() const {
  FinetuneWeights w{0, 0, 0};
  for (const auto& t : loss_terms) {
    if (t == "pixel") w.pixel = lambdas.pixel;
    if (t == "feature") w.feature = lambdas.feature;
    if (t == "hash") w.hash = lambdas.hash;
  }
  return w;
}

json ExperimentConfig::to_json() const {
  std::vector<std::string> ops;
  for (const auto& op : eval.ops) ops.push_back(to_string(op));
  const auto& t = model.train;
  return {
      {"data",
       {{"root", data.root.string()},
        {"synthetic", data.synthetic},
        {"P", data.identities},
        {"per_id", data.per_id},
        {"image_size", data.image_size},
        {"train_per_id", data.train_per_id},
        {"test_per_id", data.test_per_id},
        {"min_images", data.min_images},
        {"seed", data.seed}}},
      {"model",
       {{"arch", t.arch},
        {"K", t.code_bits},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"quantization_weight", t.quantization_weight},
        {"seed", t.seed},
        {"transfer_arch", model.transfer_arch},
        {"transfer_seeds", model.transfer_seeds}}},
      {"centers", {{"N_s", centers.sub_count}, {"n", centers.voters}, {"seed", centers.seed}}},
      {"cg",
       {{"quality", cg.generator.quality},
        {"widths", cg.generator.widths},
        {"seed", cg.generator.seed},
        {"finetune_lr", cg.generator.finetune_lr},
        {"pretrain_epochs", cg.pretrain.epochs},
        {"pretrain_batch_size", cg.pretrain.batch_size},
        {"pretrain_lr", cg.pretrain.learning_rate},
        {"grid_window", cg.grid.window},
        {"grid_stride", cg.grid.stride},
        {"loss_terms", cg.loss_terms},
        {"lambdas", {cg.lambdas.pixel, cg.lambdas.feature, cg.lambdas.hash}}}},
      {"attack",
       {{"T", attack.epochs},
        {"eta", attack.eta},
        {"epsilon", attack.epsilon},
        {"alpha", attack.alpha},
        {"beta", attack.beta},
        {"batch_size", attack.batch_size},
        {"seed", attack.seed},
        {"gate_k", attack.gate_k},
        {"objective", to_string(attack.objective)},
        {"use_cg", to_string(attack.use_cg)},
        {"finetune_cg", attack.finetune_cg}}},
      {"eval",
       {{"ops", ops},
        {"k", eval.k},
        {"ablation_modes", eval.ablation_modes},
        {"sweeps",
         {{"jpeg", eval.sweeps.jpeg_quality},
          {"resize", eval.sweeps.resize_ratio},
          {"blur", eval.sweeps.blur_kernel},
          {"blur_sigma", eval.sweeps.blur_sigma},
          {"rotate", eval.sweeps.rotate_degrees},
          {"noise", eval.sweeps.noise_sigma}}}}},
      {"run", {{"dir", run_dir.string()}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& doc, const std::filesystem::path& base_dir) {
  const ExperimentConfig defaults;
  const auto schema = defaults.to_json();
  std::vector<std::string> unknown;
  find_unknown(doc, schema, "", unknown);
  if (!unknown.empty()) throw ConfigError(unknown);

  auto merged = schema;
  merged.merge_patch(doc);
  Reader r(merged);
  ExperimentConfig c;

  std::string root, run_dir;
  r.read("data.root", root);
  r.read("data.synthetic", c.data.synthetic);
  r.read("data.P", c.data.identities);
  r.read("data.per_id", c.data.per_id);
  r.read("data.image_size", c.data.image_size);
  r.read("data.train_per_id", c.data.train_per_id);
  r.read("data.test_per_id", c.data.test_per_id);
  r.read("data.min_images", c.data.min_images);
  r.read("data.seed", c.data.seed);

  auto& t = c.model.train;
  r.read("model.arch", t.arch);
  r.read("model.K", t.code_bits);
  r.read("model.epochs", t.epochs);
  r.read("model.batch_size", t.batch_size);
  r.read("model.learning_rate", t.learning_rate);
  r.read("model.quantization_weight", t.quantization_weight);
  r.read("model.seed", t.seed);
  r.read("model.transfer_arch", c.model.transfer_arch);
  r.read("model.transfer_seeds", c.model.transfer_seeds);

  r.read("centers.N_s", c.centers.sub_count);
  r.read("centers.n", c.centers.voters);
  r.read("centers.seed", c.centers.seed);

  std::vector<double> lambdas;
  r.read("cg.quality", c.cg.generator.quality);
  r.read("cg.widths", c.cg.generator.widths);
  r.read("cg.seed", c.cg.generator.seed);
  r.read("cg.finetune_lr", c.cg.generator.finetune_lr);
  r.read("cg.pretrain_epochs", c.cg.pretrain.epochs);
  r.read("cg.pretrain_batch_size", c.cg.pretrain.batch_size);
  r.read("cg.pretrain_lr", c.cg.pretrain.learning_rate);
  r.read("cg.grid_window", c.cg.grid.window);
  r.read("cg.grid_stride", c.cg.grid.stride);
  r.read("cg.loss_terms", c.cg.loss_terms);
  r.read("cg.lambdas", lambdas);

  std::string objective, use_cg;
  r.read("attack.T", c.attack.epochs);
  r.read("attack.eta", c.attack.eta);
  r.read("attack.epsilon", c.attack.epsilon);
  r.read("attack.alpha", c.attack.alpha);
  r.read("attack.beta", c.attack.beta);
  r.read("attack.batch_size", c.attack.batch_size);
  r.read("attack.seed", c.attack.seed);
  r.read("attack.gate_k", c.attack.gate_k);
  r.read("attack.objective", objective);
  r.read("attack.use_cg", use_cg);
  r.read("attack.finetune_cg", c.attack.finetune_cg);

  std::vector<std::string> ops;
  r.read("eval.ops", ops);
  r.read("eval.k", c.eval.k);
  r.read("eval.ablation_modes", c.eval.ablation_modes);
  r.read("eval.sweeps.jpeg", c.eval.sweeps.jpeg_quality);
  r.read("eval.sweeps.resize", c.eval.sweeps.resize_ratio);
  r.read("eval.sweeps.blur", c.eval.sweeps.blur_kernel);
  r.read("eval.sweeps.blur_sigma", c.eval.sweeps.blur_sigma);
  r.read("eval.sweeps.rotate", c.eval.sweeps.rotate_degrees);
  r.read("eval.sweeps.noise", c.eval.sweeps.noise_sigma);
  r.read("run.dir", run_dir);

  auto guarded = [&r](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      r.problems.push_back("key '" + key + "': " + e.what());
    }
  };
  guarded("attack.objective", [&] { c.attack.objective = parse_objective(objective); });
  guarded("attack.use_cg", [&] { c.attack.use_cg = parse_cg_mode(use_cg); });
  c.eval.ops.clear();
  for (const auto& op : ops) guarded("eval.ops", [&] { c.eval.ops.push_back(parse_op(op)); });
  for (const auto& m : c.eval.ablation_modes) guarded("eval.ablation_modes", [&] { parse_cg_mode(m); });
  guarded("model", [&] { t.validate(); });
  guarded("attack", [&] { c.attack.validate(); });
  guarded("model.arch", [&] { make_backbone(t.arch); });
  guarded("model.transfer_arch", [&] { make_backbone(c.model.transfer_arch); });

  if (lambdas.size() == 3) {
    c.cg.lambdas = {lambdas[0], lambdas[1], lambdas[2]};
  } else {
    r.problems.push_back("key 'cg.lambdas' must hold exactly 3 numbers (pixel, feature, hash)");
  }
  for (const auto& term : c.cg.loss_terms) {
    r.check(term == "pixel" || term == "feature" || term == "hash",
            "key 'cg.loss_terms': unknown term '" + term + "' (expected pixel, feature, hash)");
  }
  const auto& d = c.data;
  r.check(d.image_size > 0 && d.image_size % 16 == 0, "key 'data.image_size' must be a positive multiple of 16");
  r.check(d.identities >= 2, "key 'data.P' must be >= 2");
  r.check(d.per_id >= 3, "key 'data.per_id' must be >= 3");
  r.check(d.train_per_id >= 1 && d.test_per_id >= 1, "keys 'data.train_per_id' and 'data.test_per_id' must be >= 1");
  r.check(d.min_images >= 1, "key 'data.min_images' must be >= 1");
  r.check(d.synthetic || !root.empty(), "key 'data.root' is required when data.synthetic is false");
  r.check(c.centers.sub_count >= 1, "key 'centers.N_s' must be >= 1");
  r.check(c.centers.voters >= 0, "key 'centers.n' must be >= 0 (0 selects ceil(P/2))");
  r.check(c.cg.generator.quality >= 1 && c.cg.generator.quality <= 100, "key 'cg.quality' must be in [1, 100]");
  r.check(c.cg.pretrain.epochs >= 0, "key 'cg.pretrain_epochs' must be >= 0");
  r.check(c.cg.pretrain.batch_size >= 1, "key 'cg.pretrain_batch_size' must be >= 1");
  r.check(c.cg.grid.window >= 0 && c.cg.grid.stride >= 0, "keys 'cg.grid_window' and 'cg.grid_stride' must be >= 0");
  r.check(c.eval.k >= 1, "key 'eval.k' must be >= 1");
  if (c.cg.grid.window > 0) {
    guarded("cg.grid_window", [&] { c.cg.grid.validate(d.image_size, d.image_size); });
  }
  if (!r.problems.empty()) throw ConfigError(r.problems);

  c.data.root = resolve(root, base_dir);
  c.run_dir = resolve(run_dir, base_dir);
  c.attack.cg_lr = c.cg.generator.finetune_lr;
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  std::filesystem::path base = std::filesystem::current_path();
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw ConfigError({"config file not found: " + path.string()});
    try {
      doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError({path.string() + ": " + e.what()});
    }
    base = std::filesystem::absolute(path).parent_path();
  }
  std::vector<std::string> problems;
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      problems.push_back("override '" + item + "' is not of the form key=value");
      continue;
    }
    doc[json::json_pointer("/" + [&] {
      auto key = item.substr(0, eq);
      for (auto& ch : key) {
        if (ch == '.') ch = '/';
      }
      return key;
    }())] = parse_override_value(item.substr(eq + 1));
  }
  if (!problems.empty()) throw ConfigError(problems);
  return from_json(doc, base);
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

GridSpec ExperimentConfig::grid() const {
  return cg.grid.window == 0 ? GridSpec::default_for(data.image_size) : cg.grid;
}

AttackConfig ExperimentConfig::attack_config() const {
  AttackConfig a = attack;
  a.grid = grid();
  a.weights = cg.effective_weights();
  a.cg_lr = cg.generator.finetune_lr;
  return a;
}

}  // namespace toap
