#include "vloc/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>

#include "vloc/error.hpp"
#include "vloc/hash.hpp"

namespace vloc {

std::string_view to_string(Task t) {
  switch (t) {
    case Task::Global:
      return "global";
    case Task::Odometry:
      return "odometry";
    case Task::Multitask:
      return "multitask";
  }
  return "?";
}

std::string_view to_string(Strategy s) { return s == Strategy::Joint ? "joint" : "alternating"; }

std::string_view to_string(Phase p) { return p == Phase::Global ? "global" : "odometry"; }

Task parse_task(std::string_view name) {
  if (name == "global") return Task::Global;
  if (name == "odometry") return Task::Odometry;
  if (name == "multitask") return Task::Multitask;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected global|odometry|multitask)");
}

Strategy parse_strategy(std::string_view name) {
  if (name == "joint") return Strategy::Joint;
  if (name == "alternating") return Strategy::Alternating;
  throw ConfigError("unknown strategy '" + std::string(name) + "' (expected joint|alternating)");
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void append(std::vector<Tensor>& out, const std::vector<Tensor>& more) { out.insert(out.end(), more.begin(), more.end()); }

Tensor prev_pose_input(const TrainingBatch& batch) { return concat_channels(batch.pose_prev.x, batch.pose_prev.q); }

void check_batch(const TrainingBatch& batch) {
  if (!batch.images_t.defined() || !batch.images_prev.defined()) throw DataError("training batch: missing images");
  const std::size_t n = batch.images_t.dim(0);
  for (const PoseBatch* p : {&batch.pose_t, &batch.pose_prev, &batch.rel_gt}) {
    if (!p->x.defined() || !p->q.defined() || p->x.dim(0) != n || p->q.dim(0) != n) {
      throw DataError("training batch: pose tensors do not match the image batch");
    }
  }
}

LossRecord blank_record(const ModelParams& params) {
  LossRecord r;
  r.l_x = r.l_q = r.l_x_odom = r.l_q_odom = r.l_vo = kNaN;
  r.s_x = params.scale_global().s_x.item();
  r.s_q = params.scale_global().s_q.item();
  r.s_x_vo = params.scale_vo().s_x.item();
  r.s_q_vo = params.scale_vo().s_q.item();
  return r;
}

void fill_global(LossRecord& r, const GlobalLossTerms& terms) {
  r.l_x = terms.l_x.item();
  r.l_q = terms.l_q.item();
  if (terms.l_x_odom.defined()) r.l_x_odom = terms.l_x_odom.item();
  if (terms.l_q_odom.defined()) r.l_q_odom = terms.l_q_odom.item();
}

GlobalLossTerms global_loss(const PoseBatch& pred, const TrainingBatch& batch, const ModelParams& params,
                            const TrainOptions& options) {
  return global_pose_loss(options.loss, pred, batch.pose_t, batch.pose_prev, batch.rel_gt, params.scale_global(),
                          options.beta);
}

}  // namespace

std::vector<Tensor> global_task_params(const ModelParams& params) {
  std::vector<Tensor> out;
  for (ParamGroup g : {ParamGroup::Shared, ParamGroup::GlobalOnly, ParamGroup::HeadsGlobal, ParamGroup::Fusion,
                       ParamGroup::ScaleGlobal}) {
    append(out, params.group(g));
  }
  return out;
}

std::vector<Tensor> odometry_task_params(const ModelParams& params) {
  std::vector<Tensor> out;
  for (ParamGroup g : {ParamGroup::Shared, ParamGroup::OdomOnly, ParamGroup::HeadsOdom, ParamGroup::ScaleVo}) {
    append(out, params.group(g));
  }
  return out;
}

LossRecord train_step_joint(const TrainingBatch& batch, const ModelParams& params, Adam& optimizer,
                            const TrainOptions& options, std::mt19937_64& rng) {
  check_batch(batch);
  params.zero_grad();
  LossRecord record = blank_record(params);
  Tape tape;
  TapeScope scope(tape);
  const ForwardOptions fwd{true, &rng};
  const JointPrediction pred = forward_joint(params, batch.images_t, batch.images_prev, prev_pose_input(batch), fwd);
  const GlobalLossTerms g = global_loss(pred.global, batch, params, options);
  const Tensor l_vo = vo_loss(pred.odometry, batch.rel_gt, params.scale_vo());
  const Tensor total = add(g.total, l_vo);
  fill_global(record, g);
  record.l_vo = l_vo.item();
  record.total = total.item();
  tape.backward(total);
  optimizer.step();
  return record;
}

LossRecord train_step_alternating(const TrainingBatch& batch, const ModelParams& params, Adam& global_optimizer,
                                  Adam& odometry_optimizer, Phase phase, const TrainOptions& options,
                                  std::mt19937_64& rng) {
  check_batch(batch);
  params.zero_grad();
  LossRecord record = blank_record(params);
  Tape tape;
  TapeScope scope(tape);
  const ForwardOptions fwd{true, &rng};
  if (phase == Phase::Global) {
    const PoseBatch pred = forward_global(params, batch.images_t, prev_pose_input(batch), fwd);
    const GlobalLossTerms g = global_loss(pred, batch, params, options);
    fill_global(record, g);
    record.total = g.total.item();
    tape.backward(g.total);
    global_optimizer.step();
  } else {
    const PoseBatch pred = forward_odometry(params, batch.images_t, batch.images_prev, fwd);
    const Tensor l_vo = vo_loss(pred, batch.rel_gt, params.scale_vo());
    record.l_vo = l_vo.item();
    record.total = record.l_vo;
    tape.backward(l_vo);
    odometry_optimizer.step();
  }
  return record;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const ModelParams& params, TrainOptions options) : params_(params), options_(options) {
  if (options_.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  switch (options_.task) {
    case Task::Global:
      global_ = std::make_unique<Adam>(global_task_params(params_), options_.adam);
      break;
    case Task::Odometry:
      odometry_ = std::make_unique<Adam>(odometry_task_params(params_), options_.adam);
      break;
    case Task::Multitask:
      if (options_.strategy == Strategy::Joint) {
        joint_ = std::make_unique<Adam>(params_.all(), options_.adam);
      } else {
        global_ = std::make_unique<Adam>(global_task_params(params_), options_.adam);
        odometry_ = std::make_unique<Adam>(odometry_task_params(params_), options_.adam);
      }
      break;
  }
}

Phase Trainer::phase_for(std::size_t step_index) const {
  switch (options_.task) {
    case Task::Global:
      return Phase::Global;
    case Task::Odometry:
      return Phase::Odometry;
    case Task::Multitask:
      break;
  }
  // Joint steps report the global phase; they update everything at once.
  if (options_.strategy == Strategy::Joint) return Phase::Global;
  return step_index % 2 == 0 ? Phase::Global : Phase::Odometry;
}

LossRecord Trainer::step(const TrainingBatch& batch, std::size_t step_index, std::mt19937_64& rng) {
  LossRecord r;
  if (joint_) {
    r = train_step_joint(batch, params_, *joint_, options_, rng);
  } else {
    const Phase phase = phase_for(step_index);
    // Single-task runs own only one optimizer; the other phase never occurs.
    Adam* g = global_ ? global_.get() : odometry_.get();
    Adam* o = odometry_ ? odometry_.get() : global_.get();
    r = train_step_alternating(batch, params_, *g, *o, phase, options_, rng);
  }
  r.step = step_index;
  return r;
}

std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(step));
}

FitResult fit(const ModelParams& params, const BatchSource& source, const TrainOptions& options,
              const StepObserver& observer) {
  Trainer trainer(params, options);
  FitResult result;
  result.curve.reserve(options.iterations);
  for (std::size_t step = 0; step < options.iterations; ++step) {
    std::mt19937_64 rng(step_seed(options.seed, step));
    LossRecord record;
    try {
      const TrainingBatch batch = source(step, rng);
      record = trainer.step(batch, step, rng);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(record.total)) {
      throw NumericalError("training diverged at step " + std::to_string(step) + ": non-finite loss");
    }
    result.curve.push_back(record);
    if (observer) observer(step, trainer.phase_for(step), record);
  }
  return result;
}

void write_loss_curve_csv(std::ostream& os, const std::vector<LossRecord>& curve) {
  os << "step,L_total,L_x,L_q,L_x_odom,L_q_odom,L_vo,s_x,s_q,s_x_vo,s_q_vo\n";
  char buf[64];
  auto field = [&](double v) {
    if (std::isnan(v)) {
      os << ",nan";
    } else {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      os << buf;
    }
  };
  for (const LossRecord& r : curve) {
    os << r.step;
    for (double v : {r.total, r.l_x, r.l_q, r.l_x_odom, r.l_q_odom, r.l_vo, r.s_x, r.s_q, r.s_x_vo, r.s_q_vo}) field(v);
    os << '\n';
  }
}

}  // namespace vloc
