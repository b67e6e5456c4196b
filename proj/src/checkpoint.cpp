#include "vloc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vloc/error.hpp"
#include "vloc/hash.hpp"

namespace vloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'V', 'L', 'O', 'C', 'N', 'E', 'T', '\0'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint64_t bits = 0;
  if constexpr (sizeof(T) == 8) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (sizeof(T) == 8) {
      return std::bit_cast<T>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string_view take(std::size_t n) {
    need(n);
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ConfigError("checkpoint is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params, const json& metadata) {
  json meta = metadata;
  meta["network"] = params.config().to_json();
  const std::string meta_text = meta.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointFormat);
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  put<std::uint64_t>(out, params.entries().size());
  for (const auto& e : params.entries()) {
    const std::string name = std::string(to_string(e.group)) + "/" + e.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Shape& shape = e.value.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put<std::uint64_t>(out, d);
    for (double v : e.value.data()) put<double>(out, v);
  }
  return out;
}

void save_checkpoint(const fs::path& path, const ModelParams& params, const json& metadata) {
  const std::string bytes = serialize_checkpoint(params, metadata);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) throw ConfigError("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointFormat) {
    throw ConfigError("unsupported checkpoint format " + std::to_string(version));
  }
  const auto meta_len = r.get<std::uint64_t>();
  json meta;
  try {
    meta = json::parse(r.take(meta_len));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint metadata: ") + e.what());
  }
  if (!meta.contains("network")) throw ConfigError("checkpoint metadata lacks the network config");
  ModelParams params = ModelParams::build(NetworkConfig::from_json(meta.at("network")), 0);

  const auto count = r.get<std::uint64_t>();
  if (count != params.entries().size()) {
    throw ConfigError("checkpoint holds " + std::to_string(count) + " tensors, network expects " +
                      std::to_string(params.entries().size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string full(r.take(r.get<std::uint32_t>()));
    const std::size_t slash = full.find('/');
    if (slash == std::string::npos) throw ConfigError("malformed parameter name '" + full + "'");
    const std::string name = full.substr(slash + 1);
    const ModelParams::Entry* e = params.find(name);
    if (e == nullptr) throw ConfigError("checkpoint parameter '" + name + "' is not part of the network");
    if (to_string(e->group) != std::string_view(full).substr(0, slash)) {
      throw ConfigError("checkpoint parameter '" + name + "' has group " + full.substr(0, slash));
    }
    Shape shape(r.get<std::uint32_t>());
    for (std::size_t& d : shape) d = r.get<std::uint64_t>();
    if (shape != e->value.shape()) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(e->value.shape()));
    }
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.get<double>();
    params.assign(name, values);
  }
  if (!r.done()) throw ConfigError("trailing bytes after checkpoint payload");
  return {std::move(meta), std::move(params)};
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  try {
    return deserialize_checkpoint(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string checkpoint_hash(const fs::path& path) { return hash_hex(fnv1a64(read_file(path))); }

std::size_t copy_groups(const ModelParams& dst, const ModelParams& src, std::span<const ParamGroup> groups) {
  std::size_t copied = 0;
  for (const auto& e : dst.entries()) {
    if (std::find(groups.begin(), groups.end(), e.group) == groups.end()) continue;
    const ModelParams::Entry* s = src.find(e.name);
    if (s == nullptr) throw ConfigError("source model lacks parameter '" + e.name + "'");
    if (s->value.shape() != e.value.shape()) {
      throw ConfigError("parameter '" + e.name + "' has shape " + shape_string(s->value.shape()) + " in the source, " +
                        shape_string(e.value.shape()) + " in the target");
    }
    Tensor t = e.value;
    const auto from = s->value.data();
    std::copy(from.begin(), from.end(), t.mutable_data().begin());
    ++copied;
  }
  return copied;
}

std::string_view to_string(InitMode m) {
  switch (m) {
    case InitMode::Scratch:
      return "scratch";
    case InitMode::MtGloc:
      return "mt-gloc";
    case InitMode::MtVo:
      return "mt-vo";
    case InitMode::MtDual:
      return "mt-dual";
  }
  return "?";
}

InitMode parse_init_mode(std::string_view name) {
  for (InitMode m : {InitMode::Scratch, InitMode::MtGloc, InitMode::MtVo, InitMode::MtDual}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown init mode '" + std::string(name) + "' (expected scratch|mt-gloc|mt-vo|mt-dual)");
}

void initialize_from(const ModelParams& dst, InitMode mode, const ModelParams* global_src,
                     const ModelParams* odometry_src) {
  static constexpr ParamGroup kGlobal[] = {ParamGroup::Shared, ParamGroup::GlobalOnly, ParamGroup::HeadsGlobal,
                                           ParamGroup::Fusion, ParamGroup::ScaleGlobal};
  static constexpr ParamGroup kOdomPrivate[] = {ParamGroup::OdomOnly, ParamGroup::HeadsOdom, ParamGroup::ScaleVo};
  static constexpr ParamGroup kShared[] = {ParamGroup::Shared};
  const bool need_global = mode == InitMode::MtGloc || mode == InitMode::MtDual;
  const bool need_odom = mode == InitMode::MtVo || mode == InitMode::MtDual;
  if (need_global && global_src == nullptr) throw ConfigError(std::string(to_string(mode)) + " needs a global checkpoint");
  if (need_odom && odometry_src == nullptr) throw ConfigError(std::string(to_string(mode)) + " needs an odometry checkpoint");
  if (need_odom) {
    copy_groups(dst, *odometry_src, kOdomPrivate);
    if (mode == InitMode::MtVo) copy_groups(dst, *odometry_src, kShared);
  }
  if (need_global) copy_groups(dst, *global_src, kGlobal);
}

}  // namespace vloc
