#ifndef VLOC_PIPELINE_HPP_
#define VLOC_PIPELINE_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vloc/config.hpp"
#include "vloc/data.hpp"
#include "vloc/eval.hpp"
#include "vloc/model.hpp"
#include "vloc/train.hpp"

namespace vloc {

struct DatasetBundle {
  std::string scene;
  std::string hash;
  std::vector<Sequence> sequences;  // images loaded
};

/// A synthetic dataset (manifest.json) or a 7-Scenes layout
/// (TrainSplit.txt / TestSplit.txt). Throws DataError otherwise.
DatasetBundle load_dataset(const std::filesystem::path& dir);

/// Minibatches of training-split pairs; depends only on (seed, step).
BatchSource make_batch_source(const PairDataset& data, std::size_t batch_size, CropMode crop, std::uint64_t seed);

struct TrainedModel {
  ModelParams params;
  FitResult fit;
};

/// Builds the network from config (seeded by config.seed), applies
/// config.init from the given source models and trains on the training
/// split of `data`.
TrainedModel train_model(const RunConfig& config, const PairDataset& data, const ModelParams* global_src = nullptr,
                         const ModelParams* odometry_src = nullptr, const StepObserver& observer = {});

/// Checkpoint metadata: effective config text, its hashes, seed, library
/// version, the dataset hash and the training mean image.
nlohmann::json run_metadata(const RunConfig& config, const std::string& dataset_hash, const Image& mean);

/// The training mean image stored by run_metadata.
Image mean_from_metadata(const nlohmann::json& metadata);

/// The run config embedded in checkpoint metadata.
RunConfig config_from_metadata(const nlohmann::json& metadata);

MetricsReport evaluate_model(const ModelParams& params, const PairDataset& data, const RunConfig& config,
                             const std::string& scene, const std::string& checkpoint_hash,
                             const std::string& dataset_hash, Warnings* warnings = nullptr);

}  // namespace vloc

#endif  // VLOC_PIPELINE_HPP_
