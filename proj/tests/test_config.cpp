#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "vloc/config.hpp"
#include "vloc/error.hpp"

namespace vloc {
namespace {

TEST(RunConfig, EveryKeyRoundTripsThroughText) {
  RunConfig a;
  a.set("net.stage_channels", "8,16,32,64");
  a.set("net.activation", "relu");
  a.set("train.learning_rate", "0.00025");
  a.set("train.strategy", "alternating");
  a.set("eval.vo_windows", "0.5,1");
  a.set("dataset", "/tmp/data");
  RunConfig b;
  for (const auto& [k, v] : parse_key_values(a.to_text(), "text")) b.set(k, v);
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(a.hash(), b.hash());
  for (const std::string& key : RunConfig::keys()) EXPECT_EQ(a.get(key), b.get(key)) << key;
}

TEST(RunConfig, UnknownKeysAndBadValuesAreConfigErrors) {
  RunConfig c;
  EXPECT_THROW(c.set("net.width", "3"), ConfigError);
  EXPECT_THROW(c.get("nope"), ConfigError);
  EXPECT_THROW(c.set("train.iterations", "many"), ConfigError);
  EXPECT_THROW(c.set("train.iterations", "-5"), ConfigError);
  EXPECT_THROW(c.set("net.activation", "tanh"), ConfigError);
  EXPECT_THROW(c.set("train.loss", "l1"), ConfigError);
  EXPECT_THROW(c.set("train.learning_rate", "nan"), ConfigError);
}

TEST(RunConfig, HashIgnoresPathsButNotKnobs) {
  RunConfig a, b;
  b.set("out", "/elsewhere");
  b.set("dataset", "/data");
  EXPECT_EQ(a.hash(), b.hash());
  b.set("train.iterations", "7");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.model_hash(), b.model_hash());
  b.set("net.fc1_dim", "64");
  EXPECT_NE(a.model_hash(), b.model_hash());
  EXPECT_EQ(a.to_text(false).find("dataset"), std::string::npos);
}

TEST(RunConfig, FinalizeDerivesInputSizeAndSeed) {
  RunConfig c;
  c.set("pre.rescale_short_side", "40");
  c.set("pre.crop", "24");
  c.set("seed", "99");
  c.finalize();
  EXPECT_EQ(c.network.input_height, 24u);
  EXPECT_EQ(c.network.input_width, 24u);
  EXPECT_EQ(c.train.seed, 99u);
}

TEST(RunConfig, FinalizeRejectsInconsistentValues) {
  auto broken = [](std::string_view key, std::string_view value) {
    RunConfig c;
    c.set(key, value);
    EXPECT_THROW(c.finalize(), ConfigError) << key << "=" << value;
  };
  broken("pre.crop", "64");
  broken("synth.frames", "0");
  broken("train.batch_size", "0");
  broken("train.adam_beta1", "1");
  broken("net.share_up_to_stage", "5");
  broken("net.fuse_prev_pose_at_stage", "1");
  RunConfig init;
  init.set("train.task", "global");
  init.set("train.init", "mt-dual");
  EXPECT_THROW(init.finalize(), ConfigError);
  broken("eval.histogram_bins", "0");
  RunConfig ok;
  EXPECT_NO_THROW(ok.finalize());
}

TEST(Presets, GlobalVariants) {
  RunConfig m1;
  apply_preset(m1, "m1");
  EXPECT_EQ(m1.network.activation, Activation::Relu);
  EXPECT_EQ(m1.network.fuse_prev_pose_at_stage, 0u);
  EXPECT_EQ(m1.train.task, Task::Global);
  EXPECT_EQ(m1.train.loss, LossMode::Beta);
  RunConfig m3;
  apply_preset(m3, "m3");
  EXPECT_EQ(m3.train.loss, LossMode::GeoBeta);
  EXPECT_EQ(m3.network.fuse_prev_pose_at_stage, 5u);
  RunConfig m4;
  apply_preset(m4, "m4");
  EXPECT_EQ(m4.network.activation, Activation::Elu);
  EXPECT_EQ(m4.network.fuse_prev_pose_at_stage, m4.network.num_stages());
  EXPECT_EQ(m4.train.loss, LossMode::Geo);
  EXPECT_EQ(m4.presets, (std::vector<std::string>{"m4"}));
}

TEST(Presets, ScaleInitialValues) {
  RunConfig c;
  EXPECT_EQ(c.network.s_x_init, 0.0);
  EXPECT_EQ(c.network.s_q_init, -3.0);
  apply_preset(c, "cambridge");
  EXPECT_EQ(c.network.s_x_init, -3.0);
  EXPECT_EQ(c.network.s_q_init, -6.5);
}

TEST(Presets, MultitaskInitModes) {
  for (const char* name : {"mt-gloc", "mt-vo", "mt-dual"}) {
    RunConfig c;
    apply_preset(c, name);
    EXPECT_EQ(c.train.task, Task::Multitask);
    EXPECT_EQ(c.train.strategy, Strategy::Alternating);
    EXPECT_EQ(c.init, parse_init_mode(name));
    EXPECT_NO_THROW(c.finalize());
  }
  RunConfig c;
  apply_preset(c, "full-schedule");
  EXPECT_EQ(c.train.iterations, 120000u);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_THROW(apply_preset(c, "m9"), ConfigError);
  for (const std::string& p : preset_names()) {
    RunConfig d;
    EXPECT_NO_THROW(apply_preset(d, p)) << p;
  }
}

TEST(ConfigFile, PresetsApplyBeforeExplicitKeys) {
  testing::TempDir dir("cfg");
  std::ofstream(dir.path() / "run.cfg") << "# comment\ntrain.loss = beta  # trailing\npreset = m4\n\nseed = 3\n";
  RunConfig c;
  load_config_file(c, dir.path() / "run.cfg");
  EXPECT_EQ(c.train.loss, LossMode::Beta);
  EXPECT_EQ(c.network.activation, Activation::Elu);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_THROW(load_config_file(c, dir.path() / "missing.cfg"), ConfigError);
}

TEST(ConfigFile, SyntaxErrorsNameTheLine) {
  try {
    parse_key_values("seed = 1\njust words\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_key_values(" = 4\n", "x"), ConfigError);
}

TEST(RunConfig, JsonHoldsEveryNonPathKey) {
  const RunConfig c;
  const auto j = c.to_json();
  EXPECT_FALSE(j.contains("dataset"));
  EXPECT_EQ(j.at("net.activation"), "elu");
  EXPECT_EQ(j.at("train.beta"), c.get("train.beta"));
}

}  // namespace
}  // namespace vloc
