#ifndef VLOC_EVAL_HPP_
#define VLOC_EVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vloc/data.hpp"
#include "vloc/geometry.hpp"
#include "vloc/model.hpp"

namespace vloc {

struct PoseErrors {
  std::vector<double> translation;  // meters
  std::vector<double> orientation;  // degrees
  std::vector<std::string> frame_ids;
};

/// Throws Error on a length mismatch. frame_ids may be empty.
PoseErrors localization_errors(std::span<const Pose> predictions, std::span<const Pose> groundtruth,
                               std::span<const std::string> frame_ids = {});

/// Odd n: middle order statistic. Even n: mean of the two middle ones.
double median(std::span<const double> values);

/// Fraction of errors <= each threshold. Thresholds must be strictly
/// increasing and the last one must cover the largest error.
std::vector<double> cumulative_histogram(std::span<const double> errors, std::span<const double> thresholds);
/// `count` evenly spaced thresholds ending exactly at max(errors).
std::vector<double> default_thresholds(std::span<const double> errors, std::size_t count = 20);

struct VoOptions {
  // Window lengths as fractions of the sequence path length.
  std::vector<double> window_fractions{0.25, 0.5, 0.75, 1.0};
  std::size_t stride = 1;
  // Score every consecutive pair on its own instead of windows.
  bool per_pair = false;
};

struct VoMetrics {
  double translation_percent = 0.0;
  double rotation_deg_per_m = 0.0;
  std::size_t windows = 0;
  std::size_t skipped = 0;

  friend bool operator==(const VoMetrics&, const VoMetrics&) = default;
};

/// predicted_rel[k] is the motion from gt_poses[k] to gt_poses[k+1]. For
/// each window the predictions are chained from the groundtruth start pose
/// and the endpoint error is divided by the groundtruth path length of the
/// window. Windows with zero path length are skipped with a warning.
VoMetrics vo_metrics(std::span<const RelativeMotion> predicted_rel, std::span<const Pose> gt_poses,
                     const VoOptions& options = {}, Warnings* warnings = nullptr);

struct Histogram {
  std::vector<double> thresholds;
  std::vector<double> fractions;

  friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct SceneMetrics {
  std::string scene;
  std::size_t frames = 0;
  double median_translation = 0.0;
  double median_orientation = 0.0;
  Histogram translation_histogram;
  Histogram orientation_histogram;
  std::optional<VoMetrics> odometry;

  friend bool operator==(const SceneMetrics&, const SceneMetrics&) = default;
};

struct MetricsReport {
  std::string schema_version;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  std::string dataset_hash;
  // Frame 0 of each sequence is fed its groundtruth pose and not scored.
  bool first_frame_bootstrap = true;
  std::string vo_protocol = "windowed";
  std::vector<double> vo_windows;
  std::vector<SceneMetrics> scenes;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// metrics.json, metrics.csv (scene, component, median) and one
/// histogram_<scene>_<component>.csv per scene and component.
void emit_report(const MetricsReport& report, const std::filesystem::path& dir);
void write_metrics_csv(std::ostream& os, const MetricsReport& report);
void write_histogram_csv(std::ostream& os, const Histogram& histogram);

/// Global predictions for frames 1..n-1 of a sequence, each frame receiving
/// the previous frame's prediction (frame 0's groundtruth for frame 1).
std::vector<Pose> predict_sequence(const ModelParams& params, const PairDataset& data, std::size_t sequence);
/// Odometry predictions for every consecutive pair of a sequence.
std::vector<RelativeMotion> predict_odometry(const ModelParams& params, const PairDataset& data, std::size_t sequence);

struct EvaluationOptions {
  Split split = Split::Test;
  bool odometry = true;
  VoOptions vo{};
  std::size_t histogram_bins = 20;
};

/// Scores every sequence of the requested split, pooled into one scene
/// named `scene`.
SceneMetrics evaluate_scene(const ModelParams& params, const PairDataset& data, const std::string& scene,
                            const EvaluationOptions& options, Warnings* warnings = nullptr);

}  // namespace vloc

#endif  // VLOC_EVAL_HPP_
