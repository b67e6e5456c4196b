#ifndef VLOC_DATA_HPP_
#define VLOC_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vloc/geometry.hpp"
#include "vloc/train.hpp"

namespace vloc {

/// Planar image, channel-major (C,H,W), values nominally in [0,1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA) as a 3-channel image.
Image read_png(const std::filesystem::path& path);
/// Writes an 8-bit RGB (3 channels) or gray (1 channel) PNG; values are
/// clamped to [0,1] and rounded to the nearest level.
void write_png(const std::filesystem::path& path, const Image& image);
/// Rounds every value to the nearest of the 256 levels a PNG can hold.
Image quantize8(const Image& image);

enum class Split { Train, Test };
std::string_view to_string(Split s);

struct FrameRecord {
  std::string sequence_id;
  std::size_t frame_index = 0;
  std::string image_path;  // empty for in-memory frames
  Pose pose;
};

struct Sequence {
  std::string id;
  Split split = Split::Train;
  std::vector<FrameRecord> frames;
  // Parallel to frames once loaded; empty otherwise.
  std::vector<Image> images;

  std::size_t size() const { return frames.size(); }
};

/// Collects non-fatal loader diagnostics; when null they go to stderr.
using Warnings = std::vector<std::string>;

// ---------------------------------------------------------------- formats

Mat4 read_pose_file(const std::filesystem::path& path);
void write_pose_file(const std::filesystem::path& path, const Pose& pose);

/// <root>/seq-NN/frame-NNNNNN.{color.png,pose.txt} with TrainSplit.txt and
/// TestSplit.txt listing sequence numbers (one per line, "sequence3" or
/// "3"). Sequences in neither file are skipped. Images are not read.
std::vector<Sequence> load_sevenscenes_layout(const std::filesystem::path& root);
/// Writes poses (and images, when present) in the layout above.
void write_sevenscenes_layout(const std::filesystem::path& root, const std::vector<Sequence>& sequences);
/// Reads the image of every frame that has an image_path.
void load_images(Sequence& sequence);

/// Lines "timestamp tx ty tz qx qy qz qw"; '#' starts a comment.
struct TumRecord {
  double timestamp = 0.0;
  Pose pose;
};
std::vector<TumRecord> load_tum_format(const std::filesystem::path& path, Warnings* warnings = nullptr);
std::vector<TumRecord> parse_tum_format(std::string_view text, std::string_view origin = "<memory>",
                                        Warnings* warnings = nullptr);
void write_tum_format(const std::filesystem::path& path, std::span<const TumRecord> records);

// -------------------------------------------------------------- synthetic

/// Axis-aligned box of camera positions.
struct Region {
  Vec3 min{0.0, 0.0, 0.0};
  Vec3 max{0.0, 0.0, 0.0};
  bool contains(const Vec3& p) const;
};

struct SyntheticWorldConfig {
  // Cameras stay inside [-extent/2, extent/2] on x, y and z.
  double extent = 4.0;
  // Camera heights are additionally limited to +-vertical_range/2.
  double vertical_range = 1.0;
  double max_step_translation = 0.08;  // meters
  double max_step_rotation_deg = 3.0;
  std::size_t width = 32;
  std::size_t height = 32;
  double fov_deg = 60.0;
  // Headings stay within +-yaw_range_deg/2 of +x; 360 leaves them free.
  double yaw_range_deg = 360.0;
  std::uint64_t texture_seed = 7;
  std::size_t num_sequences = 1;
  // The last num_test_sequences sequences form the test split.
  std::size_t num_test_sequences = 0;
  // Aliasing: positions in region B render as if shifted back into region A.
  // A covers x in [-extent/2, -extent/2 + aliasing_width] and B is A moved
  // by aliasing_offset along x. Both span the full y and z range.
  bool aliasing = false;
  double aliasing_width = 1.5;
  double aliasing_offset = 2.5;

  void validate() const;
  /// Region A and region B (aliasing mode only).
  std::pair<Region, Region> aliasing_regions() const;

  nlohmann::json to_json() const;
  static SyntheticWorldConfig from_json(const nlohmann::json& j);
};

/// Procedural scene: a textured room viewed through a pinhole camera.
class SyntheticRenderer {
 public:
  explicit SyntheticRenderer(const SyntheticWorldConfig& config);
  /// Deterministic image of the scene at pose p.
  Image render(const Pose& p) const;

 private:
  struct Wave {
    Vec3 k;
    double phase;
    double amplitude;
  };
  Image render_unaliased(const Pose& p) const;
  double texture(std::size_t channel, const Vec3& point) const;

  SyntheticWorldConfig config_;
  std::vector<Wave> waves_[3];
  double room_half_ = 0.0;
};

struct SyntheticDataset {
  SyntheticWorldConfig config;
  std::uint64_t seed = 0;
  std::vector<Sequence> sequences;  // images populated and 8-bit quantized
  // Frames (sequence, index) whose positions lie in region B together with
  // the region-A pose that renders identically.
  struct AliasPair {
    std::size_t sequence = 0;
    std::size_t frame = 0;
    Pose twin;
  };
  std::vector<AliasPair> alias_pairs;

  std::string scene_hash() const;
  nlohmann::json manifest() const;
};

/// n_frames per sequence. Throws ConfigError for n_frames == 0 and DataError
/// when a trajectory cannot be kept inside the extent.
SyntheticDataset synth_generate(const SyntheticWorldConfig& config, std::size_t n_frames, std::uint64_t seed);

/// manifest.json plus one PNG per frame. Refuses to overwrite an existing
/// manifest unless `overwrite` is set.
void write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDataset& dataset,
                             bool overwrite = false);
SyntheticDataset load_synthetic_dataset(const std::filesystem::path& dir);

/// FNV-1a over every regular file under dir (sorted relative paths + bytes).
std::string directory_hash(const std::filesystem::path& dir);

// ------------------------------------------------------------- preprocess

enum class CropMode { Random, Center };

struct PreprocessConfig {
  // 0 keeps the native resolution.
  std::size_t rescale_short_side = 32;
  std::size_t crop = 32;

  void validate() const;
  nlohmann::json to_json() const;
  static PreprocessConfig from_json(const nlohmann::json& j);
};

/// Bilinear resize (half-pixel centers, edge clamped).
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
/// Shorter side to `short_side`; the longer side is rounded half-up.
Image rescale_short_side(const Image& image, std::size_t short_side);
/// Per-pixel, per-channel mean; all images must share one shape.
Image mean_image(std::span<const Image> images);
Image subtract(const Image& image, const Image& mean);
/// Center: offsets floor((H-c)/2), floor((W-c)/2). Random: uniform offsets.
Image crop(const Image& image, std::size_t size, CropMode mode, std::mt19937_64* rng);

/// Rescale, subtract the mean (already at rescaled resolution), crop.
Image preprocess(const Image& image, const PreprocessConfig& config, const Image& mean, CropMode mode,
                 std::mt19937_64* rng);

// ------------------------------------------------------------------ pairs

struct FramePair {
  std::size_t sequence = 0;  // index into the sequence list
  std::size_t current = 0;   // frame position within the sequence
  std::size_t previous = 0;
  Pose pose_t;
  Pose pose_prev;
  RelativeMotion rel_gt;
};

/// Consecutive pairs within one sequence (position k with k-1).
std::vector<FramePair> make_pairs(const Sequence& sequence, std::size_t sequence_index = 0);
std::vector<FramePair> make_pairs(std::span<const Sequence> sequences);

/// Rescaled, mean-subtracted images for a set of sequences, cropped per batch.
class PairDataset {
 public:
  /// The mean image is taken over the training-split sequences.
  PairDataset(std::vector<Sequence> sequences, PreprocessConfig config);
  /// Uses a given mean image (evaluation with the training mean).
  PairDataset(std::vector<Sequence> sequences, PreprocessConfig config, Image mean);

  const std::vector<Sequence>& sequences() const { return sequences_; }
  const Image& mean() const { return mean_; }
  const PreprocessConfig& config() const { return config_; }

  /// Pairs whose sequence belongs to `split`.
  std::vector<FramePair> pairs(Split split) const;

  /// Preprocessed C x crop x crop input of one frame.
  Image input(std::size_t sequence, std::size_t frame, CropMode mode, std::mt19937_64* rng) const;

  /// Stacks pairs into a training batch. Throws DataError for pairs that are
  /// not consecutive frames of one sequence. Each pair shares one crop
  /// offset between its two frames.
  TrainingBatch batch(std::span<const FramePair> pairs, CropMode mode, std::mt19937_64* rng) const;

 private:
  void prepare();

  std::vector<Sequence> sequences_;
  PreprocessConfig config_;
  Image mean_;
  std::vector<std::vector<Image>> prepared_;  // rescaled minus mean
};

/// Stacks equally shaped images into [N,C,H,W].
Tensor stack_images(std::span<const Image> images);

/// Seed-determined minibatches drawn by reshuffling once per epoch.
class PairSampler {
 public:
  PairSampler(std::vector<FramePair> pairs, std::size_t batch_size);
  /// Batch number `step`; depends only on (seed, step).
  std::vector<FramePair> batch(std::size_t step, std::uint64_t seed) const;
  std::size_t size() const { return pairs_.size(); }

 private:
  std::vector<FramePair> pairs_;
  std::size_t batch_size_;
};

}  // namespace vloc

#endif  // VLOC_DATA_HPP_
