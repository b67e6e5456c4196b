#ifndef VLOC_MODEL_HPP_
#define VLOC_MODEL_HPP_

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vloc/geometry.hpp"
#include "vloc/losses.hpp"
#include "vloc/tensor.hpp"

namespace vloc {

enum class Activation { Elu, Relu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Architecture knobs. Stages are numbered like the residual blocks of a
/// ResNet: stage 1 is the strided stem, stages 2..L are residual stages with
/// stage_channels[k-2] output channels. Stage 2 keeps the stem resolution,
/// every later stage halves it.
struct NetworkConfig {
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::size_t input_channels = 3;
  std::size_t stem_channels = 16;
  std::vector<std::size_t> stage_channels{16, 32, 64, 128};
  std::vector<std::size_t> units_per_stage{2, 2, 2, 2};
  // Stages 1..share_up_to_stage are shared between the global stream and the
  // current-frame odometry stream. At most L-1: the last stage of the
  // odometry stream consumes the concatenated Siamese features.
  std::size_t share_up_to_stage = 3;
  // The previous pose is fused into the input of this stage; 0 disables
  // fusion. Valid values are 0 or 2..L.
  std::size_t fuse_prev_pose_at_stage = 5;
  // Channels of the reshaped fc4 output appended at the fusion stage.
  std::size_t fusion_channels = 4;
  std::size_t fc1_dim = 128;
  double dropout_keep = 0.8;
  Activation activation = Activation::Elu;
  double s_x_init = 0.0;
  double s_q_init = -3.0;
  double s_x_vo_init = 0.0;
  double s_q_vo_init = -3.0;

  std::size_t num_stages() const { return stage_channels.size() + 1; }
  std::size_t channels_at(std::size_t stage) const;
  std::size_t height_at(std::size_t stage) const;
  std::size_t width_at(std::size_t stage) const;
  /// fc4 output dimension D = H x W x fusion_channels of the stage before
  /// the fusion stage; 0 when fusion is disabled.
  std::size_t fc4_dim() const;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

enum class ParamGroup {
  Shared,
  GlobalOnly,
  OdomOnly,
  HeadsGlobal,
  HeadsOdom,
  Fusion,
  ScaleGlobal,
  ScaleVo,
};

std::string_view to_string(ParamGroup g);
ParamGroup parse_param_group(std::string_view name);

struct ConvAffine {
  Tensor weight;  // [O,C,k,k]
  Tensor scale;   // [O]
  Tensor bias;    // [O]
  std::size_t stride = 1;
};

struct Bottleneck {
  ConvAffine reduce;   // 1x1
  ConvAffine spatial;  // 3x3, carries the stride
  ConvAffine expand;   // 1x1
  std::optional<ConvAffine> projection;
};

struct ResidualStage {
  std::vector<Bottleneck> units;
};

struct Dense {
  Tensor weight;  // [in,out]
  Tensor bias;    // [out]
};

struct Heads {
  Dense fc1;
  Dense fc_x;  // -> 3
  Dense fc_q;  // -> 4
};

/// Stem plus residual stages 2..(1 + stages.size()).
struct Trunk {
  ConvAffine stem;
  std::vector<ResidualStage> stages;
};

/// Every trainable leaf of the network, partitioned into disjoint groups,
/// with structured views that alias the same tensors. The current-frame
/// odometry trunk aliases the global trunk for the shared stages.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor value;
  };

  static ModelParams build(const NetworkConfig& config, std::uint64_t seed);

  ModelParams(ModelParams&&) = default;
  ModelParams& operator=(ModelParams&&) = default;
  ModelParams(const ModelParams&) = delete;
  ModelParams& operator=(const ModelParams&) = delete;

  /// Deep copy.
  ModelParams clone() const;

  const NetworkConfig& config() const { return config_; }

  const Trunk& global_trunk() const { return global_; }
  const Trunk& odom_current_trunk() const { return odom_current_; }
  const Trunk& odom_previous_trunk() const { return odom_previous_; }
  const ResidualStage& odom_merge_stage() const { return odom_merge_; }
  const Heads& global_heads() const { return global_heads_; }
  const Heads& odom_heads() const { return odom_heads_; }
  const std::optional<Dense>& fusion() const { return fusion_; }
  const ScaleParams& scale_global() const { return scale_global_; }
  const ScaleParams& scale_vo() const { return scale_vo_; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> group(ParamGroup g) const;
  std::vector<Tensor> all() const;
  const Entry* find(std::string_view name) const;
  /// Total number of scalar parameters.
  std::size_t parameter_count() const;

  void zero_grad() const;

  /// Overwrites the values of `name` (shape must match).
  void assign(std::string_view name, std::span<const double> values);

 private:
  friend class ModelLayoutBuilder;
  ModelParams() = default;

  NetworkConfig config_;
  std::vector<Entry> entries_;
  Trunk global_;
  Trunk odom_current_;
  Trunk odom_previous_;
  ResidualStage odom_merge_;
  Heads global_heads_;
  Heads odom_heads_;
  std::optional<Dense> fusion_;
  ScaleParams scale_global_;
  ScaleParams scale_vo_;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

/// images: [N,C,H,W]; prev_pose: [N,7] laid out (x,y,z,qw,qx,qy,qz).
/// Returns x [N,3] and q [N,4] with unit rows.
PoseBatch forward_global(const ModelParams& params, const Tensor& images, const Tensor& prev_pose,
                         const ForwardOptions& options);

/// Relative motion from I_prev to I_t; q rows are unit.
PoseBatch forward_odometry(const ModelParams& params, const Tensor& images_t, const Tensor& images_prev,
                           const ForwardOptions& options);

struct JointPrediction {
  PoseBatch global;
  PoseBatch odometry;
};

/// Both streams in one pass, evaluating the shared prefix once. Equivalent to
/// forward_global followed by forward_odometry with the same rng.
JointPrediction forward_joint(const ModelParams& params, const Tensor& images_t, const Tensor& images_prev,
                              const Tensor& prev_pose, const ForwardOptions& options);

Tensor pose_tensor(std::span<const Pose> poses);
std::vector<Pose> poses_from_batch(const PoseBatch& batch);
std::vector<RelativeMotion> motions_from_batch(const PoseBatch& batch);

}  // namespace vloc

#endif  // VLOC_MODEL_HPP_
