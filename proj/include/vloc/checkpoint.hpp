#ifndef VLOC_CHECKPOINT_HPP_
#define VLOC_CHECKPOINT_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "vloc/model.hpp"

namespace vloc {

// Binary layout, little-endian:
//   "VLOCNET\0" | u32 format version | u64 n | n bytes of metadata JSON
//   | u64 parameter count | per parameter: u32 name length, name
//   ("group/name"), u32 rank, u64 dims..., f64 values...
// The metadata always carries the network config under "network".
inline constexpr std::uint32_t kCheckpointFormat = 1;

std::string serialize_checkpoint(const ModelParams& params, const nlohmann::json& metadata);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const nlohmann::json& metadata);

struct LoadedCheckpoint {
  nlohmann::json metadata;
  ModelParams params;
};

/// Throws ConfigError for a corrupt or incompatible file.
LoadedCheckpoint deserialize_checkpoint(std::string_view bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a of the file contents.
std::string checkpoint_hash(const std::filesystem::path& path);

/// Copies every parameter of the listed groups from src into dst by name.
/// Shapes must match; returns the number of tensors copied.
std::size_t copy_groups(const ModelParams& dst, const ModelParams& src, std::span<const ParamGroup> groups);

/// Weight initializations of the multitask model.
enum class InitMode { Scratch, MtGloc, MtVo, MtDual };
std::string_view to_string(InitMode m);
InitMode parse_init_mode(std::string_view name);

/// Applies an initialization: MtGloc copies the global stream from
/// `global_src`, MtVo the odometry stream from `odometry_src`, MtDual both
/// (shared stages from the global model).
void initialize_from(const ModelParams& dst, InitMode mode, const ModelParams* global_src,
                     const ModelParams* odometry_src);

}  // namespace vloc

#endif  // VLOC_CHECKPOINT_HPP_
