#ifndef VLOC_TRAIN_HPP_
#define VLOC_TRAIN_HPP_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <string_view>
#include <vector>

#include "vloc/losses.hpp"
#include "vloc/model.hpp"
#include "vloc/optim.hpp"

namespace vloc {

enum class Task { Global, Odometry, Multitask };
enum class Strategy { Joint, Alternating };
enum class Phase { Global, Odometry };

std::string_view to_string(Task t);
std::string_view to_string(Strategy s);
std::string_view to_string(Phase p);
Task parse_task(std::string_view name);
Strategy parse_strategy(std::string_view name);

/// Consecutive-frame training tuples, already preprocessed.
struct TrainingBatch {
  Tensor images_t;     // [B,C,H,W]
  Tensor images_prev;  // [B,C,H,W]
  PoseBatch pose_t;
  PoseBatch pose_prev;
  PoseBatch rel_gt;

  std::size_t size() const { return images_t.dim(0); }
};

struct TrainOptions {
  Task task = Task::Multitask;
  Strategy strategy = Strategy::Joint;
  LossMode loss = LossMode::Geo;
  double beta = 1.0;
  std::size_t iterations = 5000;
  std::size_t batch_size = 16;
  AdamOptions adam{};
  std::uint64_t seed = 0;
};

/// One row of the loss curve. Terms not evaluated on a step are NaN.
struct LossRecord {
  std::size_t step = 0;
  double total = 0.0;
  double l_x = 0.0;
  double l_q = 0.0;
  double l_x_odom = 0.0;
  double l_q_odom = 0.0;
  double l_vo = 0.0;
  double s_x = 0.0;
  double s_q = 0.0;
  double s_x_vo = 0.0;
  double s_q_vo = 0.0;
};

/// Leaves updated by the global-pose task: shared, global_only, global
/// heads, fc4 and the global scales.
std::vector<Tensor> global_task_params(const ModelParams& params);
/// Leaves updated by the odometry task: shared, odom_only, odometry heads
/// and the odometry scales.
std::vector<Tensor> odometry_task_params(const ModelParams& params);

/// L_global + L_vo backpropagated once, one Adam step over every parameter.
/// The previous-pose input is the groundtruth previous pose.
LossRecord train_step_joint(const TrainingBatch& batch, const ModelParams& params, Adam& optimizer,
                            const TrainOptions& options, std::mt19937_64& rng);

/// Global phase: backpropagate the global loss and step `global_optimizer`.
/// Odometry phase: backpropagate L_vo and step `odometry_optimizer`.
LossRecord train_step_alternating(const TrainingBatch& batch, const ModelParams& params, Adam& global_optimizer,
                                  Adam& odometry_optimizer, Phase phase, const TrainOptions& options,
                                  std::mt19937_64& rng);

/// Owns the optimizers required by a task/strategy combination and routes
/// each step to the right update.
class Trainer {
 public:
  Trainer(const ModelParams& params, TrainOptions options);

  LossRecord step(const TrainingBatch& batch, std::size_t step_index, std::mt19937_64& rng);
  /// Phase used at a given step (alternating multitask toggles every step).
  Phase phase_for(std::size_t step_index) const;

  const TrainOptions& options() const { return options_; }
  Adam* global_optimizer() { return global_.get(); }
  Adam* odometry_optimizer() { return odometry_.get(); }
  Adam* joint_optimizer() { return joint_.get(); }

 private:
  const ModelParams& params_;
  TrainOptions options_;
  std::unique_ptr<Adam> global_;
  std::unique_ptr<Adam> odometry_;
  std::unique_ptr<Adam> joint_;
};

/// Produces the batch for a step. Any randomness must come from `rng`.
using BatchSource = std::function<TrainingBatch(std::size_t step, std::mt19937_64& rng)>;
using StepObserver = std::function<void(std::size_t step, Phase phase, const LossRecord& record)>;

struct FitResult {
  std::vector<LossRecord> curve;
};

/// Runs options.iterations steps. Each step draws its randomness (batch
/// assembly and dropout) from an rng seeded by (seed, step), so runs are
/// bit-reproducible. A non-finite loss aborts with a NumericalError naming
/// the step.
FitResult fit(const ModelParams& params, const BatchSource& source, const TrainOptions& options,
              const StepObserver& observer = {});

std::uint64_t step_seed(std::uint64_t seed, std::size_t step);

/// CSV columns: step, L_total, L_x, L_q, L_x_odom, L_q_odom, L_vo, s_x, s_q,
/// s_x_vo, s_q_vo. Doubles are printed with 17 significant digits.
void write_loss_curve_csv(std::ostream& os, const std::vector<LossRecord>& curve);

}  // namespace vloc

#endif  // VLOC_TRAIN_HPP_
