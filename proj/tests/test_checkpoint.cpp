#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "vloc/checkpoint.hpp"
#include "vloc/error.hpp"

namespace vloc {
namespace {

NetworkConfig tiny_net() {
  NetworkConfig c;
  c.input_height = c.input_width = 16;
  c.stem_channels = 8;
  c.stage_channels = {8, 8, 16, 16};
  c.units_per_stage = {1, 1, 1, 1};
  c.fc1_dim = 8;
  return c;
}

bool same_values(const ModelParams& a, const ModelParams& b, ParamGroup g) {
  const auto x = a.group(g);
  const auto y = b.group(g);
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::equal(x[i].data().begin(), x[i].data().end(), y[i].data().begin(), y[i].data().end())) return false;
  }
  return true;
}

constexpr ParamGroup kAllGroups[] = {ParamGroup::Shared,    ParamGroup::GlobalOnly,  ParamGroup::OdomOnly,
                                     ParamGroup::HeadsGlobal, ParamGroup::HeadsOdom, ParamGroup::Fusion,
                                     ParamGroup::ScaleGlobal, ParamGroup::ScaleVo};

TEST(Checkpoint, BitExactRoundTrip) {
  testing::TempDir dir("ckpt");
  const ModelParams p = ModelParams::build(tiny_net(), 3);
  const nlohmann::json meta = {{"seed", 3}, {"note", "x"}};
  save_checkpoint(dir.path() / "m.bin", p, meta);
  const LoadedCheckpoint back = load_checkpoint(dir.path() / "m.bin");
  for (ParamGroup g : kAllGroups) EXPECT_TRUE(same_values(p, back.params, g)) << to_string(g);
  EXPECT_EQ(back.metadata.at("note"), "x");
  EXPECT_EQ(NetworkConfig::from_json(back.metadata.at("network")).to_json(), tiny_net().to_json());
  EXPECT_EQ(serialize_checkpoint(back.params, back.metadata), serialize_checkpoint(p, back.metadata));
  const std::string h = checkpoint_hash(dir.path() / "m.bin");
  save_checkpoint(dir.path() / "n.bin", p, meta);
  EXPECT_EQ(checkpoint_hash(dir.path() / "n.bin"), h);
}

TEST(Checkpoint, LoadedModelKeepsStreamAliasing) {
  const ModelParams p = ModelParams::build(tiny_net(), 4);
  const LoadedCheckpoint back = deserialize_checkpoint(serialize_checkpoint(p, {}));
  EXPECT_TRUE(back.params.odom_current_trunk().stem.weight.same_storage(back.params.global_trunk().stem.weight));
}

TEST(Checkpoint, CorruptionIsRejected) {
  const ModelParams p = ModelParams::build(tiny_net(), 5);
  const std::string bytes = serialize_checkpoint(p, {});
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), ConfigError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), ConfigError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), ConfigError);
  std::string version = bytes;
  version[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(version), ConfigError);
  EXPECT_THROW(deserialize_checkpoint(""), ConfigError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), ConfigError);
}

TEST(Checkpoint, ArchitectureMismatchIsRejected) {
  const ModelParams p = ModelParams::build(tiny_net(), 6);
  std::string bytes = serialize_checkpoint(p, {});
  // Same-length edit of the stored network config.
  const std::size_t at = bytes.find("\"fc1_dim\":8");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 10] = '9';
  EXPECT_THROW(deserialize_checkpoint(bytes), ConfigError);
}

TEST(InitModes, CopyTheRightGroups) {
  const ModelParams st = ModelParams::build(tiny_net(), 10);
  const ModelParams vo = ModelParams::build(tiny_net(), 11);
  {
    const ModelParams mt = ModelParams::build(tiny_net(), 12);
    initialize_from(mt, InitMode::MtGloc, &st, nullptr);
    for (ParamGroup g : {ParamGroup::Shared, ParamGroup::GlobalOnly, ParamGroup::HeadsGlobal, ParamGroup::Fusion,
                         ParamGroup::ScaleGlobal}) {
      EXPECT_TRUE(same_values(mt, st, g)) << to_string(g);
    }
    EXPECT_FALSE(same_values(mt, st, ParamGroup::OdomOnly));
  }
  {
    const ModelParams mt = ModelParams::build(tiny_net(), 12);
    initialize_from(mt, InitMode::MtVo, nullptr, &vo);
    for (ParamGroup g : {ParamGroup::Shared, ParamGroup::OdomOnly, ParamGroup::HeadsOdom, ParamGroup::ScaleVo}) {
      EXPECT_TRUE(same_values(mt, vo, g)) << to_string(g);
    }
    EXPECT_FALSE(same_values(mt, vo, ParamGroup::GlobalOnly));
  }
  {
    const ModelParams mt = ModelParams::build(tiny_net(), 12);
    initialize_from(mt, InitMode::MtDual, &st, &vo);
    EXPECT_TRUE(same_values(mt, st, ParamGroup::Shared));
    EXPECT_TRUE(same_values(mt, st, ParamGroup::GlobalOnly));
    EXPECT_TRUE(same_values(mt, vo, ParamGroup::OdomOnly));
    EXPECT_TRUE(same_values(mt, vo, ParamGroup::HeadsOdom));
  }
  const ModelParams mt = ModelParams::build(tiny_net(), 12);
  EXPECT_THROW(initialize_from(mt, InitMode::MtDual, &st, nullptr), ConfigError);
  EXPECT_THROW(initialize_from(mt, InitMode::MtGloc, nullptr, &vo), ConfigError);
  EXPECT_NO_THROW(initialize_from(mt, InitMode::Scratch, nullptr, nullptr));
}

TEST(InitModes, ShapeMismatchIsAConfigError) {
  NetworkConfig wide = tiny_net();
  wide.fc1_dim = 32;
  const ModelParams src = ModelParams::build(wide, 1);
  const ModelParams dst = ModelParams::build(tiny_net(), 1);
  EXPECT_THROW(initialize_from(dst, InitMode::MtGloc, &src, nullptr), ConfigError);
  for (InitMode m : {InitMode::Scratch, InitMode::MtGloc, InitMode::MtVo, InitMode::MtDual}) {
    EXPECT_EQ(parse_init_mode(to_string(m)), m);
  }
}

}  // namespace
}  // namespace vloc
