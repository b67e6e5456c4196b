#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "vloc/error.hpp"
#include "vloc/losses.hpp"
#include "vloc/model.hpp"

namespace vloc {
namespace {

using testing::random_tensor;

NetworkConfig small_config() {
  NetworkConfig c;
  c.input_height = 16;
  c.input_width = 16;
  c.stem_channels = 8;
  c.stage_channels = {8, 16, 16, 32};
  c.units_per_stage = {1, 1, 1, 1};
  c.fc1_dim = 16;
  return c;
}

Tensor prev_pose_batch(std::size_t n, std::mt19937_64& rng) {
  std::vector<Pose> poses;
  for (std::size_t i = 0; i < n; ++i) poses.push_back(testing::random_pose(rng));
  return pose_tensor(poses);
}

bool identical(const ModelParams& a, const ModelParams& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto x = a.entries()[i].value.data();
    const auto y = b.entries()[i].value.data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

TEST(NetworkConfig, DefaultsMatchDeskScale) {
  const NetworkConfig c;
  EXPECT_EQ(c.num_stages(), 5u);
  EXPECT_EQ(c.stage_channels, (std::vector<std::size_t>{16, 32, 64, 128}));
  EXPECT_EQ(c.share_up_to_stage, 3u);
  EXPECT_EQ(c.fuse_prev_pose_at_stage, 5u);
  EXPECT_EQ(c.fc1_dim, 128u);
  EXPECT_DOUBLE_EQ(c.dropout_keep, 0.8);
  // Stage 4 output is 4x4 for 32x32 inputs; D = 4 * 4 * 4 extra channels.
  EXPECT_EQ(c.fc4_dim(), 64u);
  EXPECT_NO_THROW(c.validate());
}

TEST(NetworkConfig, ValidationErrors) {
  NetworkConfig c;
  c.share_up_to_stage = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NetworkConfig{};
  c.fuse_prev_pose_at_stage = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NetworkConfig{};
  c.fuse_prev_pose_at_stage = 6;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NetworkConfig{};
  c.units_per_stage = {1, 1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = NetworkConfig{};
  c.dropout_keep = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(ModelParams::build(c, 1), ConfigError);
}

TEST(NetworkConfig, JsonRoundTrip) {
  NetworkConfig c = small_config();
  c.activation = Activation::Relu;
  c.s_q_init = -6.5;
  const NetworkConfig d = NetworkConfig::from_json(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
}

TEST(ModelParams, SameSeedIsBitIdentical) {
  const ModelParams a = ModelParams::build(small_config(), 9);
  const ModelParams b = ModelParams::build(small_config(), 9);
  const ModelParams c = ModelParams::build(small_config(), 10);
  EXPECT_TRUE(identical(a, b));
  EXPECT_FALSE(identical(a, c));
  EXPECT_TRUE(identical(a, a.clone()));
}

TEST(ModelParams, CloneIsDeep) {
  const ModelParams a = ModelParams::build(small_config(), 1);
  const ModelParams b = a.clone();
  Tensor w = b.entries()[0].value;
  w.mutable_data()[0] += 1.0;
  EXPECT_FALSE(identical(a, b));
}

TEST(ModelParams, ParameterCountOfTwoStageConfig) {
  NetworkConfig c;
  c.input_height = c.input_width = 8;
  c.stem_channels = 4;
  c.stage_channels = {8, 16};
  c.units_per_stage = {1, 1};
  c.share_up_to_stage = 1;
  c.fuse_prev_pose_at_stage = 0;
  c.fc1_dim = 8;
  // conv(in,out,k) = out*in*k*k weights + out scales + out biases.
  // stem conv(3,4,3) = 116.
  // stage 2 (in 4, out 8, width 2): 12 + 40 + 32 + projection 48 = 132.
  // stage 3 (in 8, out 16, width 4): 40 + 152 + 96 + projection 160 = 448.
  // Global trunk 116 + 132 + 448; odometry current stage 2 = 132 (stem
  // shared); odometry previous stem + stage 2 = 248; merge stage 3 on 16
  // channels: 72 + 152 + 96 + 288 = 608. Heads: (16*8+8) + (8*3+3) +
  // (8*4+4) = 199 per task. Four scales.
  const std::size_t want = 696 + 132 + 248 + 608 + 2 * 199 + 4;
  EXPECT_EQ(ModelParams::build(c, 0).parameter_count(), want);
}

TEST(ModelParams, GroupsPartitionEveryLeaf) {
  const ModelParams p = ModelParams::build(NetworkConfig{}, 3);
  std::size_t total = 0;
  std::set<const void*> seen;
  for (ParamGroup g : {ParamGroup::Shared, ParamGroup::GlobalOnly, ParamGroup::OdomOnly, ParamGroup::HeadsGlobal,
                       ParamGroup::HeadsOdom, ParamGroup::Fusion, ParamGroup::ScaleGlobal, ParamGroup::ScaleVo}) {
    for (const Tensor& t : p.group(g)) {
      EXPECT_TRUE(seen.insert(t.node().get()).second) << "tensor in two groups";
      ++total;
    }
  }
  EXPECT_EQ(total, p.all().size());
  EXPECT_EQ(p.group(ParamGroup::ScaleGlobal).size(), 2u);
  EXPECT_EQ(p.group(ParamGroup::ScaleVo).size(), 2u);
  EXPECT_EQ(p.group(ParamGroup::Fusion).size(), 2u);
}

TEST(ModelParams, SharedSetIsExactlyTheFirstStages) {
  for (std::size_t share = 0; share <= 4; ++share) {
    NetworkConfig c;
    c.share_up_to_stage = share;
    const ModelParams p = ModelParams::build(c, 1);
    std::set<std::string> stages;
    for (const auto& e : p.entries()) {
      if (e.group != ParamGroup::Shared) continue;
      EXPECT_EQ(e.name.rfind("global.", 0), 0u) << e.name;
      stages.insert(e.name.substr(0, e.name.find('.', 7)));
    }
    std::set<std::string> want;
    for (std::size_t k = 1; k <= share; ++k) want.insert(k == 1 ? "global.stem" : "global.stage" + std::to_string(k));
    EXPECT_EQ(stages, want) << "share " << share;
  }
}

TEST(ModelParams, OdometryCurrentStreamAliasesSharedStages) {
  NetworkConfig c;
  c.share_up_to_stage = 3;
  const ModelParams p = ModelParams::build(c, 1);
  EXPECT_TRUE(p.odom_current_trunk().stem.weight.same_storage(p.global_trunk().stem.weight));
  EXPECT_TRUE(p.odom_current_trunk().stages[1].units[0].reduce.weight.same_storage(
      p.global_trunk().stages[1].units[0].reduce.weight));
  EXPECT_FALSE(p.odom_current_trunk().stages[2].units[0].reduce.weight.same_storage(
      p.global_trunk().stages[2].units[0].reduce.weight));
  EXPECT_FALSE(p.odom_previous_trunk().stem.weight.same_storage(p.global_trunk().stem.weight));
}

TEST(ModelParams, ScalesTakeConfiguredInitialValues) {
  NetworkConfig c;
  c.s_x_init = -3.0;
  c.s_q_init = -6.5;
  const ModelParams p = ModelParams::build(c, 1);
  EXPECT_EQ(p.scale_global().s_x.item(), -3.0);
  EXPECT_EQ(p.scale_global().s_q.item(), -6.5);
}

TEST(ModelParams, AffineStartsAsIdentity) {
  const ModelParams p = ModelParams::build(small_config(), 1);
  for (double v : p.global_trunk().stem.scale.data()) EXPECT_EQ(v, 1.0);
  for (double v : p.global_trunk().stem.bias.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, GlobalOutputContract) {
  std::mt19937_64 rng(1);
  const ModelParams p = ModelParams::build(NetworkConfig{}, 2);
  const Tensor img = random_tensor({3, 3, 32, 32}, rng);
  const Tensor prev = prev_pose_batch(3, rng);
  const PoseBatch out = forward_global(p, img, prev, {});
  ASSERT_EQ(out.x.shape(), (Shape{3, 3}));
  ASSERT_EQ(out.q.shape(), (Shape{3, 4}));
  for (std::size_t r = 0; r < 3; ++r) {
    double n = 0.0;
    for (std::size_t c = 0; c < 4; ++c) n += out.q.at(r * 4 + c) * out.q.at(r * 4 + c);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-9);
  }
  const PoseBatch again = forward_global(p, img, prev, {});
  EXPECT_TRUE(std::equal(out.x.data().begin(), out.x.data().end(), again.x.data().begin()));
  EXPECT_TRUE(std::equal(out.q.data().begin(), out.q.data().end(), again.q.data().begin()));
}

TEST(Forward, FusionMakesPreviousPoseLive) {
  std::mt19937_64 rng(2);
  const Tensor img = random_tensor({1, 3, 32, 32}, rng);
  const Tensor prev = prev_pose_batch(1, rng);
  Tensor moved = prev.clone();
  moved.mutable_data()[0] += 0.5;
  for (std::size_t fuse : {3u, 4u, 5u}) {
    NetworkConfig c;
    c.fuse_prev_pose_at_stage = fuse;
    const ModelParams p = ModelParams::build(c, 3);
    const PoseBatch a = forward_global(p, img, prev, {});
    const PoseBatch b = forward_global(p, img, moved, {});
    double diff = 0.0;
    for (std::size_t i = 0; i < 3; ++i) diff = std::max(diff, std::abs(a.x.at(i) - b.x.at(i)));
    EXPECT_GT(diff, 0.0) << "fuse " << fuse;
  }
  NetworkConfig off;
  off.fuse_prev_pose_at_stage = 0;
  const ModelParams p = ModelParams::build(off, 3);
  EXPECT_EQ(forward_global(p, img, prev, {}).x.at(0), forward_global(p, img, moved, {}).x.at(0));
}

TEST(Forward, OdometryOutputContract) {
  std::mt19937_64 rng(3);
  const ModelParams p = ModelParams::build(NetworkConfig{}, 4);
  const Tensor a = random_tensor({2, 3, 32, 32}, rng);
  const Tensor b = random_tensor({2, 3, 32, 32}, rng);
  const PoseBatch out = forward_odometry(p, a, b, {});
  EXPECT_EQ(out.x.shape(), (Shape{2, 3}));
  EXPECT_EQ(out.q.shape(), (Shape{2, 4}));
  const PoseBatch same = forward_odometry(p, a, a, {});
  for (double v : same.x.data()) EXPECT_TRUE(std::isfinite(v));
  for (double v : same.q.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, GlobalOnlyParamsDoNotTouchOdometryWithoutSharing) {
  std::mt19937_64 rng(4);
  NetworkConfig c = small_config();
  c.share_up_to_stage = 0;
  const ModelParams p = ModelParams::build(c, 5);
  const Tensor a = random_tensor({1, 3, 16, 16}, rng);
  const Tensor b = random_tensor({1, 3, 16, 16}, rng);
  const PoseBatch before = forward_odometry(p, a, b, {});
  for (const Tensor& t : p.group(ParamGroup::GlobalOnly)) {
    Tensor w = t;
    for (double& v : w.mutable_data()) v += 0.25;
  }
  const PoseBatch after = forward_odometry(p, a, b, {});
  EXPECT_TRUE(std::equal(before.x.data().begin(), before.x.data().end(), after.x.data().begin()));
  const PoseBatch g = forward_global(p, a, prev_pose_batch(1, rng), {});
  EXPECT_TRUE(std::isfinite(g.x.at(0)));
}

TEST(Forward, JointEqualsSeparateStreams) {
  std::mt19937_64 rng(5);
  const ModelParams p = ModelParams::build(small_config(), 6);
  const Tensor a = random_tensor({2, 3, 16, 16}, rng);
  const Tensor b = random_tensor({2, 3, 16, 16}, rng);
  const Tensor prev = prev_pose_batch(2, rng);
  const JointPrediction j = forward_joint(p, a, b, prev, {});
  const PoseBatch g = forward_global(p, a, prev, {});
  const PoseBatch o = forward_odometry(p, a, b, {});
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(j.global.x.at(i), g.x.at(i));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(j.odometry.q.at(i), o.q.at(i));
}

TEST(Forward, TrainingModeUsesDropoutFromRng) {
  std::mt19937_64 rng(6);
  const ModelParams p = ModelParams::build(small_config(), 7);
  const Tensor a = random_tensor({2, 3, 16, 16}, rng);
  const Tensor prev = prev_pose_batch(2, rng);
  std::mt19937_64 r1(1), r2(1), r3(2);
  const PoseBatch x1 = forward_global(p, a, prev, {true, &r1});
  const PoseBatch x2 = forward_global(p, a, prev, {true, &r2});
  const PoseBatch x3 = forward_global(p, a, prev, {true, &r3});
  EXPECT_EQ(x1.x.at(0), x2.x.at(0));
  EXPECT_NE(x1.x.at(0), x3.x.at(0));
}

TEST(Forward, ResolutionMismatchIsAnError) {
  std::mt19937_64 rng(7);
  const ModelParams p = ModelParams::build(NetworkConfig{}, 1);
  EXPECT_THROW(forward_global(p, random_tensor({1, 3, 16, 16}, rng), prev_pose_batch(1, rng), {}), ShapeError);
  EXPECT_THROW(forward_global(p, random_tensor({1, 3, 32, 32}, rng), Tensor::zeros({1, 6}), {}), ShapeError);
}

TEST(Forward, ReluVariantRuns) {
  std::mt19937_64 rng(8);
  NetworkConfig c = small_config();
  c.activation = Activation::Relu;
  const ModelParams p = ModelParams::build(c, 1);
  const PoseBatch out = forward_global(p, random_tensor({1, 3, 16, 16}, rng), prev_pose_batch(1, rng), {});
  EXPECT_TRUE(std::isfinite(out.x.at(0)));
}

// Which parameters end up with a non-zero gradient.
std::set<ParamGroup> groups_with_gradient(const ModelParams& p) {
  std::set<ParamGroup> out;
  for (const auto& e : p.entries()) {
    if (!e.value.has_grad()) continue;
    for (double g : e.value.grad()) {
      if (g != 0.0) {
        out.insert(e.group);
        break;
      }
    }
  }
  return out;
}

TEST(GradientPartition, VoLossNeverReachesGlobalOnlyOrFusion) {
  std::mt19937_64 rng(9);
  const ModelParams p = ModelParams::build(small_config(), 11);
  const Tensor a = random_tensor({2, 3, 16, 16}, rng);
  const Tensor b = random_tensor({2, 3, 16, 16}, rng);
  Tape tape;
  TapeScope scope(tape);
  const PoseBatch rel = forward_odometry(p, a, b, {});
  const PoseBatch gt{random_tensor({2, 3}, rng), normalize_rows(random_tensor({2, 4}, rng))};
  tape.backward(vo_loss(rel, gt, p.scale_vo()));
  const auto g = groups_with_gradient(p);
  EXPECT_FALSE(g.count(ParamGroup::GlobalOnly));
  EXPECT_FALSE(g.count(ParamGroup::Fusion));
  EXPECT_FALSE(g.count(ParamGroup::HeadsGlobal));
  EXPECT_FALSE(g.count(ParamGroup::ScaleGlobal));
  EXPECT_TRUE(g.count(ParamGroup::Shared));
  EXPECT_TRUE(g.count(ParamGroup::OdomOnly));
  EXPECT_TRUE(g.count(ParamGroup::ScaleVo));
}

TEST(GradientPartition, GlobalLossNeverReachesOdometryOnly) {
  std::mt19937_64 rng(10);
  const ModelParams p = ModelParams::build(small_config(), 12);
  const Tensor a = random_tensor({2, 3, 16, 16}, rng);
  const Tensor prev = prev_pose_batch(2, rng);
  Tape tape;
  TapeScope scope(tape);
  const PoseBatch pred = forward_global(p, a, prev, {});
  const PoseBatch gt{random_tensor({2, 3}, rng), normalize_rows(random_tensor({2, 4}, rng))};
  const PoseBatch prev_b{random_tensor({2, 3}, rng), normalize_rows(random_tensor({2, 4}, rng))};
  tape.backward(geometric_consistency_loss(pred, gt, prev_b, gt, p.scale_global()));
  const auto g = groups_with_gradient(p);
  EXPECT_FALSE(g.count(ParamGroup::OdomOnly));
  EXPECT_FALSE(g.count(ParamGroup::HeadsOdom));
  EXPECT_FALSE(g.count(ParamGroup::ScaleVo));
  EXPECT_TRUE(g.count(ParamGroup::Shared));
  EXPECT_TRUE(g.count(ParamGroup::GlobalOnly));
  EXPECT_TRUE(g.count(ParamGroup::Fusion));
}

TEST(PoseTensor, LayoutAndRoundTrip) {
  const Pose p{{1, 2, 3}, {0.5, 0.5, 0.5, 0.5}};
  const Tensor t = pose_tensor(std::vector<Pose>{p});
  EXPECT_EQ(t.shape(), (Shape{1, 7}));
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{1, 2, 3, 0.5, 0.5, 0.5, 0.5}));
  const PoseBatch b{Tensor({1, 3}, {1, 2, 3}), Tensor({1, 4}, {0.5, 0.5, 0.5, 0.5})};
  EXPECT_EQ(poses_from_batch(b).at(0), p);
}

TEST(ParamGroupNames, RoundTrip) {
  for (ParamGroup g : {ParamGroup::Shared, ParamGroup::GlobalOnly, ParamGroup::OdomOnly, ParamGroup::HeadsGlobal,
                       ParamGroup::HeadsOdom, ParamGroup::Fusion, ParamGroup::ScaleGlobal, ParamGroup::ScaleVo}) {
    EXPECT_EQ(parse_param_group(to_string(g)), g);
  }
  EXPECT_THROW(parse_param_group("heads"), ConfigError);
}

}  // namespace
}  // namespace vloc
