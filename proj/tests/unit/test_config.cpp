#include <gtest/gtest.h>

#include <fstream>

#include "scratch_dir.hpp"
#include "toap/config.hpp"
#include "toap/tensor_container.hpp"

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

TEST(Config, DefaultsMatchTheProtocol) {
  const auto cfg = toap::ExperimentConfig::load("");
  EXPECT_EQ(cfg.attack.epochs, 100);
  EXPECT_DOUBLE_EQ(cfg.attack.epsilon, 16.0 / 255.0);
  EXPECT_DOUBLE_EQ(cfg.attack.eta, 0.02);
  EXPECT_DOUBLE_EQ(cfg.attack.alpha, 0.3);
  EXPECT_DOUBLE_EQ(cfg.attack.beta, 0.7);
  EXPECT_EQ(cfg.attack.use_cg, toap::CgMode::LocalGlobal);
  EXPECT_EQ(toap::to_string(cfg.attack.objective), "cluster+subspace");
  EXPECT_EQ(cfg.cg.generator.quality, 60);
  EXPECT_EQ(cfg.grid().window, 32);
  EXPECT_EQ(cfg.grid().stride, 16);
  EXPECT_EQ(cfg.eval.ops.size(), 5u);
}

TEST(Config, UnknownKeyIsNamed) {
  const auto msg = error_of([] { toap::ExperimentConfig::load("", {"attack.alpah=0.3"}); });
  EXPECT_NE(msg.find("attack.alpah"), std::string::npos) << msg;
  oracle::ScratchDir dir("cfg");
  toap::write_file_atomic(dir.path() / "c.json", R"({"data": {"P": 4}, "modle": {}})");
  const auto msg2 = error_of([&] { toap::ExperimentConfig::load(dir.path() / "c.json"); });
  EXPECT_NE(msg2.find("modle"), std::string::npos) << msg2;
}

TEST(Config, InvalidValuesAreAllReported) {
  try {
    toap::ExperimentConfig::load("", {"attack.T=0", "eval.ops=[\"jpeg:0\"]", "attack.use_cg=both"});
    FAIL();
  } catch (const toap::ConfigError& e) {
    EXPECT_GE(e.problems().size(), 3u);
  }
  EXPECT_THROW(toap::ExperimentConfig::load("", {"data.P=\"ten\""}), toap::ConfigError);
  EXPECT_THROW(toap::ExperimentConfig::load("", {"model.K=15"}), std::invalid_argument);
}

TEST(Config, OverridesAndRelativePaths) {
  oracle::ScratchDir dir("cfg");
  toap::write_file_atomic(dir.path() / "exp" / "c.json",
                          R"({"run": {"dir": "out"}, "data": {"root": "faces", "synthetic": false}})");
  const auto cfg = toap::ExperimentConfig::load(dir.path() / "exp" / "c.json",
                                                {"attack.objective=cluster", "attack.T=7", "cg.grid_window=16",
                                                 "cg.grid_stride=8", "cg.loss_terms=[\"pixel\"]"});
  EXPECT_EQ(cfg.run_dir, dir.path() / "exp" / "out");
  EXPECT_EQ(cfg.data.root, dir.path() / "exp" / "faces");
  EXPECT_EQ(cfg.attack.epochs, 7);
  EXPECT_FALSE(cfg.attack.objective.test.has_value());
  const auto ac = cfg.attack_config();
  EXPECT_EQ(ac.grid.window, 16);
  EXPECT_EQ(ac.weights.pixel, 1.0);
  EXPECT_EQ(ac.weights.feature, 0.0);
  EXPECT_EQ(ac.weights.hash, 0.0);
}

TEST(Config, HashTracksContent) {
  const auto a = toap::ExperimentConfig::load(""), b = toap::ExperimentConfig::load("");
  const auto c = toap::ExperimentConfig::load("", {"attack.seed=1"});
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(toap::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(toap::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Config, JsonRoundTrip) {
  const auto a = toap::ExperimentConfig::load("", {"eval.ops=[\"rotate:5\", \"noise:0.02:3\"]", "data.P=6"});
  const auto b = toap::ExperimentConfig::from_json(a.to_json(), "/");
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(b.eval.ops.size(), 2u);
}

}  // namespace
