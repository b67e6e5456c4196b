#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <sstream>

#include "vloc/data.hpp"
#include "vloc/error.hpp"
#include "vloc/train.hpp"

namespace vloc {
namespace {

NetworkConfig tiny_net() {
  NetworkConfig c;
  c.input_height = 16;
  c.input_width = 16;
  c.stem_channels = 8;
  c.stage_channels = {8, 16, 16, 32};
  c.units_per_stage = {1, 1, 1, 1};
  c.fc1_dim = 16;
  return c;
}

class TrainFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SyntheticWorldConfig w;
    w.width = 16;
    w.height = 16;
    const SyntheticDataset ds = synth_generate(w, 24, 5);
    data_ = std::make_unique<PairDataset>(ds.sequences, PreprocessConfig{16, 16});
    sampler_ = std::make_unique<PairSampler>(data_->pairs(Split::Train), 4);
  }
  static void TearDownTestSuite() {
    sampler_.reset();
    data_.reset();
  }

  static BatchSource source(std::uint64_t seed) {
    return [seed](std::size_t step, std::mt19937_64& rng) {
      const auto pairs = sampler_->batch(step, seed);
      return data_->batch(pairs, CropMode::Center, &rng);
    };
  }

  static inline std::unique_ptr<PairDataset> data_;
  static inline std::unique_ptr<PairSampler> sampler_;
};

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& ts) {
  std::vector<std::vector<double>> out;
  for (const Tensor& t : ts) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

std::vector<Tensor> leaves(const ModelParams& p, std::initializer_list<ParamGroup> groups) {
  std::vector<Tensor> out;
  for (ParamGroup g : groups) {
    const auto more = p.group(g);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

TEST_F(TrainFixture, AlternatingPhasesLeaveTheOtherPartitionBitwiseUnchanged) {
  const ModelParams p = ModelParams::build(tiny_net(), 1);
  TrainOptions o;
  o.task = Task::Multitask;
  o.strategy = Strategy::Alternating;
  o.iterations = 100;
  o.batch_size = 4;
  o.adam.learning_rate = 1e-3;
  const auto global_side = leaves(p, {ParamGroup::GlobalOnly, ParamGroup::HeadsGlobal, ParamGroup::Fusion,
                                      ParamGroup::ScaleGlobal});
  const auto odom_side = leaves(p, {ParamGroup::OdomOnly, ParamGroup::HeadsOdom, ParamGroup::ScaleVo});
  const auto shared = p.group(ParamGroup::Shared);
  std::size_t violations = 0, global_steps = 0, odom_steps = 0;
  auto before_global = snapshot(global_side);
  auto before_odom = snapshot(odom_side);
  auto before_shared = snapshot(shared);
  fit(p, source(3), o, [&](std::size_t, Phase phase, const LossRecord&) {
    const auto g = snapshot(global_side);
    const auto od = snapshot(odom_side);
    const auto sh = snapshot(shared);
    if (phase == Phase::Global) {
      ++global_steps;
      if (od != before_odom) ++violations;
      if (g == before_global) ++violations;
    } else {
      ++odom_steps;
      if (g != before_global) ++violations;
      if (od == before_odom) ++violations;
    }
    if (sh == before_shared) ++violations;
    before_global = g;
    before_odom = od;
    before_shared = sh;
  });
  EXPECT_EQ(global_steps, 50u);
  EXPECT_EQ(odom_steps, 50u);
  EXPECT_EQ(violations, 0u);
}

TEST_F(TrainFixture, JointLossEqualsRecomputedSum) {
  const ModelParams p = ModelParams::build(tiny_net(), 2);
  TrainOptions o;
  o.task = Task::Multitask;
  o.strategy = Strategy::Joint;
  o.loss = LossMode::Geo;
  o.iterations = 5;
  o.batch_size = 4;
  const FitResult r = fit(p, source(4), o);
  for (const LossRecord& rec : r.curve) {
    const double want = (rec.l_x + rec.l_x_odom) * std::exp(-rec.s_x) + rec.s_x +
                        (rec.l_q + rec.l_q_odom) * std::exp(-rec.s_q) + rec.s_q + rec.l_vo;
    EXPECT_NEAR(rec.total, want, 1e-12 * std::max(1.0, std::abs(want)));
    EXPECT_FALSE(std::isnan(rec.l_vo));
    EXPECT_FALSE(std::isnan(rec.l_x_odom));
  }
}

TEST_F(TrainFixture, JointStepUpdatesEveryGroup) {
  const ModelParams p = ModelParams::build(tiny_net(), 2);
  const auto before = snapshot(p.all());
  TrainOptions o;
  o.strategy = Strategy::Joint;
  o.iterations = 1;
  fit(p, source(4), o);
  const auto after = snapshot(p.all());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NE(before[i], after[i]) << p.entries()[i].name;
}

TEST_F(TrainFixture, LossDecreasesOnAShortRun) {
  const ModelParams p = ModelParams::build(tiny_net(), 3);
  TrainOptions o;
  o.task = Task::Global;
  o.loss = LossMode::Beta;
  o.beta = 1.0;
  o.iterations = 100;
  o.batch_size = 4;
  o.adam.learning_rate = 1e-3;
  const FitResult r = fit(p, source(5), o);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += r.curve[i].total;
    tail += r.curve[r.curve.size() - 1 - i].total;
  }
  EXPECT_LT(tail, head);
  EXPECT_TRUE(std::isnan(r.curve[0].l_vo));
}

TEST_F(TrainFixture, RunsAreBitReproducible) {
  TrainOptions o;
  o.task = Task::Multitask;
  o.strategy = Strategy::Alternating;
  o.iterations = 6;
  o.seed = 17;
  const ModelParams a = ModelParams::build(tiny_net(), 4);
  const ModelParams b = ModelParams::build(tiny_net(), 4);
  const FitResult ra = fit(a, source(o.seed), o);
  const FitResult rb = fit(b, source(o.seed), o);
  std::ostringstream ca, cb;
  write_loss_curve_csv(ca, ra.curve);
  write_loss_curve_csv(cb, rb.curve);
  EXPECT_EQ(ca.str(), cb.str());
  EXPECT_EQ(snapshot(a.all()), snapshot(b.all()));
}

TEST_F(TrainFixture, DivergenceNamesTheStep) {
  const ModelParams p = ModelParams::build(tiny_net(), 5);
  TrainOptions o;
  o.task = Task::Global;
  o.loss = LossMode::Beta;
  o.iterations = 10;
  auto inner = source(6);
  BatchSource poisoned = [&](std::size_t step, std::mt19937_64& rng) {
    TrainingBatch b = inner(step, rng);
    if (step == 3) b.images_t.mutable_data()[0] = 1e308;
    return b;
  };
  try {
    fit(p, poisoned, o);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST(Trainer, PhaseSchedule) {
  const ModelParams p = ModelParams::build(tiny_net(), 1);
  TrainOptions o;
  o.strategy = Strategy::Alternating;
  Trainer alt(p, o);
  EXPECT_EQ(alt.phase_for(0), Phase::Global);
  EXPECT_EQ(alt.phase_for(1), Phase::Odometry);
  EXPECT_EQ(alt.phase_for(2), Phase::Global);
  EXPECT_NE(alt.global_optimizer(), nullptr);
  EXPECT_NE(alt.odometry_optimizer(), nullptr);
  EXPECT_EQ(alt.joint_optimizer(), nullptr);
  o.task = Task::Odometry;
  Trainer vo(p, o);
  EXPECT_EQ(vo.phase_for(0), Phase::Odometry);
  EXPECT_EQ(vo.global_optimizer(), nullptr);
  o.batch_size = 0;
  EXPECT_THROW(Trainer(p, o), ConfigError);
}

TEST(Trainer, TaskParameterListsFollowTheGroups) {
  const ModelParams p = ModelParams::build(tiny_net(), 1);
  const auto g = global_task_params(p);
  const auto o = odometry_task_params(p);
  EXPECT_EQ(g.size() + o.size(), p.all().size() + p.group(ParamGroup::Shared).size());
}

TEST(LossCurve, CsvColumns) {
  LossRecord r;
  r.step = 2;
  r.total = 1.5;
  r.l_vo = std::nan("");
  std::ostringstream os;
  write_loss_curve_csv(os, {r});
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "step,L_total,L_x,L_q,L_x_odom,L_q_odom,L_vo,s_x,s_q,s_x_vo,s_q_vo");
  EXPECT_EQ(row, "2,1.5,0,0,0,0,nan,0,0,0,0");
}

TEST(StepSeed, DependsOnSeedAndStep) {
  EXPECT_EQ(step_seed(1, 5), step_seed(1, 5));
  EXPECT_NE(step_seed(1, 5), step_seed(1, 6));
  EXPECT_NE(step_seed(1, 5), step_seed(2, 5));
}

TEST(TaskNames, ParseRoundTrip) {
  for (Task t : {Task::Global, Task::Odometry, Task::Multitask}) EXPECT_EQ(parse_task(to_string(t)), t);
  for (Strategy s : {Strategy::Joint, Strategy::Alternating}) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_task("both"), ConfigError);
}

}  // namespace
}  // namespace vloc
