#include "vloc/pipeline.hpp"

#include "vloc/checkpoint.hpp"
#include "vloc/error.hpp"
#include "vloc/version.hpp"

namespace vloc {

namespace fs = std::filesystem;

DatasetBundle load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
  DatasetBundle out;
  out.scene = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  if (fs::exists(dir / "manifest.json")) {
    out.sequences = load_synthetic_dataset(dir).sequences;
  } else if (fs::exists(dir / "TrainSplit.txt") || fs::exists(dir / "TestSplit.txt")) {
    out.sequences = load_sevenscenes_layout(dir);
    for (Sequence& s : out.sequences) load_images(s);
  } else {
    throw DataError(dir.string() + ": neither manifest.json nor TrainSplit.txt/TestSplit.txt found");
  }
  out.hash = directory_hash(dir);
  return out;
}

BatchSource make_batch_source(const PairDataset& data, std::size_t batch_size, CropMode crop, std::uint64_t seed) {
  auto pairs = data.pairs(Split::Train);
  if (pairs.empty()) throw DataError("the training split holds no consecutive frame pairs");
  auto sampler = std::make_shared<PairSampler>(std::move(pairs), batch_size);
  return [&data, sampler, crop, seed](std::size_t step, std::mt19937_64& rng) {
    const std::vector<FramePair> b = sampler->batch(step, seed);
    return data.batch(b, crop, &rng);
  };
}

TrainedModel train_model(const RunConfig& config, const PairDataset& data, const ModelParams* global_src,
                         const ModelParams* odometry_src, const StepObserver& observer) {
  ModelParams params = ModelParams::build(config.network, config.seed);
  if (config.init != InitMode::Scratch) initialize_from(params, config.init, global_src, odometry_src);
  const BatchSource source = make_batch_source(data, config.train.batch_size, config.train_crop, config.train.seed);
  FitResult fit_result = vloc::fit(params, source, config.train, observer);
  return {std::move(params), std::move(fit_result)};
}

nlohmann::json run_metadata(const RunConfig& config, const std::string& dataset_hash, const Image& mean) {
  return {{"config", config.to_text(false)},
          {"config_hash", config.hash()},
          {"model_hash", config.model_hash()},
          {"seed", config.seed},
          {"version", std::string(kLibraryVersion)},
          {"dataset_hash", dataset_hash},
          {"mean_image",
           {{"channels", mean.channels}, {"height", mean.height}, {"width", mean.width}, {"pixels", mean.pixels}}}};
}

Image mean_from_metadata(const nlohmann::json& metadata) {
  try {
    const auto& m = metadata.at("mean_image");
    Image img;
    img.channels = m.at("channels").get<std::size_t>();
    img.height = m.at("height").get<std::size_t>();
    img.width = m.at("width").get<std::size_t>();
    img.pixels = m.at("pixels").get<std::vector<double>>();
    if (img.pixels.size() != img.channels * img.height * img.width) throw ConfigError("mean image size mismatch");
    return img;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint metadata lacks a valid mean image: ") + e.what());
  }
}

RunConfig config_from_metadata(const nlohmann::json& metadata) {
  if (!metadata.contains("config") || !metadata.at("config").is_string()) {
    throw ConfigError("checkpoint metadata lacks the run config");
  }
  RunConfig config;
  for (const auto& [k, v] : parse_key_values(metadata.at("config").get<std::string>(), "checkpoint config")) {
    config.set(k, v);
  }
  return config;
}

MetricsReport evaluate_model(const ModelParams& params, const PairDataset& data, const RunConfig& config,
                             const std::string& scene, const std::string& checkpoint_hash,
                             const std::string& dataset_hash, Warnings* warnings) {
  MetricsReport report;
  report.schema_version = std::string(kLibraryVersion);
  report.config_hash = config.hash();
  report.seed = config.seed;
  report.checkpoint_hash = checkpoint_hash;
  report.dataset_hash = dataset_hash;
  report.vo_protocol = config.eval.vo.per_pair ? "per-pair" : "windowed";
  report.vo_windows = config.eval.vo.window_fractions;
  report.scenes.push_back(evaluate_scene(params, data, scene, config.eval, warnings));
  return report;
}

}  // namespace vloc
