#ifndef VLOC_CONFIG_HPP_
#define VLOC_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vloc/checkpoint.hpp"
#include "vloc/data.hpp"
#include "vloc/eval.hpp"
#include "vloc/model.hpp"
#include "vloc/train.hpp"

namespace vloc {

/// Every knob of a run. Serialized as "key = value" lines; see keys().
struct RunConfig {
  NetworkConfig network;
  PreprocessConfig preprocess;
  SyntheticWorldConfig synth;
  std::size_t synth_frames = 64;
  TrainOptions train;
  CropMode train_crop = CropMode::Random;
  InitMode init = InitMode::Scratch;
  std::string init_global;    // checkpoint for mt-gloc / mt-dual
  std::string init_odometry;  // checkpoint for mt-vo / mt-dual
  EvaluationOptions eval;
  std::uint64_t seed = 0;
  std::string dataset;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> presets;

  /// Sets one key; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  /// All keys in serialization order.
  static const std::vector<std::string>& keys();

  /// Cross-field checks; also derives the network input size from the crop.
  void finalize();

  /// "key = value" lines. Path keys (dataset, out, checkpoint, init_*) are
  /// left out when include_paths is false.
  std::string to_text(bool include_paths = true) const;
  /// Hash of the path-free serialization.
  std::string hash() const;
  /// Hash of the net.* and pre.* keys: what a checkpoint's weights depend on.
  std::string model_hash() const;
  nlohmann::json to_json() const;
};

/// Parses "key = value" lines ('#' comments, blank lines allowed).
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text, std::string_view origin);
void load_config_file(RunConfig& config, const std::filesystem::path& path);

/// Named presets: m1..m4, st, vo, mt-gloc, mt-vo, mt-dual, cambridge,
/// paper-schedule.
void apply_preset(RunConfig& config, std::string_view name);
const std::vector<std::string>& preset_names();

}  // namespace vloc

#endif  // VLOC_CONFIG_HPP_
