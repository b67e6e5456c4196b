#include "vloc/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "vloc/error.hpp"
#include "vloc/hash.hpp"

namespace vloc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': invalid value '" + std::string(value) + "' (expected " +
                    std::string(expected) + ")");
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t to_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true|false");
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const std::size_t comma = std::min(v.find(',', pos), v.size());
    const std::string item = trim(v.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

template <typename T, typename F>
std::vector<T> to_list(std::string_view key, std::string_view v, F convert) {
  std::vector<T> out;
  for (const std::string& item : split_list(v)) out.push_back(convert(key, item));
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(values[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += values[i];
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

std::string_view crop_name(CropMode m) { return m == CropMode::Random ? "random" : "center"; }

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  bool path = false;
};

using FieldTable = std::vector<std::pair<std::string, Field>>;

const FieldTable& fields() {
  static const FieldTable table = [] {
    FieldTable t;
    auto add = [&](std::string key, Field f) { t.emplace_back(std::move(key), std::move(f)); };
#define VLOC_SIZE(KEY, MEMBER)                                                                         \
  add(KEY, {[](const RunConfig& c) { return std::to_string(c.MEMBER); },                              \
            [](RunConfig& c, std::string_view k, std::string_view v) { c.MEMBER = to_size(k, v); }})
#define VLOC_DOUBLE(KEY, MEMBER)                                                                       \
  add(KEY, {[](const RunConfig& c) { return fmt(c.MEMBER); },                                          \
            [](RunConfig& c, std::string_view k, std::string_view v) { c.MEMBER = to_double(k, v); }})
#define VLOC_BOOL(KEY, MEMBER)                                                                         \
  add(KEY, {[](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); },              \
            [](RunConfig& c, std::string_view k, std::string_view v) { c.MEMBER = to_bool(k, v); }})
#define VLOC_PATH(KEY, MEMBER)                                                                         \
  add(KEY, {[](const RunConfig& c) { return c.MEMBER; },                                               \
            [](RunConfig& c, std::string_view, std::string_view v) { c.MEMBER = std::string(v); }, true})

    add("seed", {[](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, std::string_view k, std::string_view v) { c.seed = to_u64(k, v); }});
    add("preset", {[](const RunConfig& c) { return join(c.presets); },
                   [](RunConfig& c, std::string_view, std::string_view v) { c.presets = split_list(v); }});
    VLOC_PATH("dataset", dataset);
    VLOC_PATH("out", out);
    VLOC_PATH("checkpoint", checkpoint);

    VLOC_SIZE("net.stem_channels", network.stem_channels);
    add("net.stage_channels",
        {[](const RunConfig& c) { return join(c.network.stage_channels); },
         [](RunConfig& c, std::string_view k, std::string_view v) {
           c.network.stage_channels = to_list<std::size_t>(k, v, to_size);
         }});
    add("net.units_per_stage",
        {[](const RunConfig& c) { return join(c.network.units_per_stage); },
         [](RunConfig& c, std::string_view k, std::string_view v) {
           c.network.units_per_stage = to_list<std::size_t>(k, v, to_size);
         }});
    VLOC_SIZE("net.share_up_to_stage", network.share_up_to_stage);
    VLOC_SIZE("net.fuse_prev_pose_at_stage", network.fuse_prev_pose_at_stage);
    VLOC_SIZE("net.fusion_channels", network.fusion_channels);
    VLOC_SIZE("net.fc1_dim", network.fc1_dim);
    VLOC_DOUBLE("net.dropout_keep", network.dropout_keep);
    add("net.activation", {[](const RunConfig& c) { return std::string(to_string(c.network.activation)); },
                           [](RunConfig& c, std::string_view, std::string_view v) {
                             c.network.activation = parse_activation(v);
                           }});
    VLOC_DOUBLE("net.s_x_init", network.s_x_init);
    VLOC_DOUBLE("net.s_q_init", network.s_q_init);
    VLOC_DOUBLE("net.s_x_vo_init", network.s_x_vo_init);
    VLOC_DOUBLE("net.s_q_vo_init", network.s_q_vo_init);

    VLOC_SIZE("pre.rescale_short_side", preprocess.rescale_short_side);
    VLOC_SIZE("pre.crop", preprocess.crop);

    VLOC_SIZE("synth.frames", synth_frames);
    VLOC_DOUBLE("synth.extent", synth.extent);
    VLOC_DOUBLE("synth.vertical_range", synth.vertical_range);
    VLOC_DOUBLE("synth.max_step_translation", synth.max_step_translation);
    VLOC_DOUBLE("synth.max_step_rotation_deg", synth.max_step_rotation_deg);
    VLOC_SIZE("synth.width", synth.width);
    VLOC_SIZE("synth.height", synth.height);
    VLOC_DOUBLE("synth.fov_deg", synth.fov_deg);
    VLOC_DOUBLE("synth.yaw_range_deg", synth.yaw_range_deg);
    add("synth.texture_seed", {[](const RunConfig& c) { return std::to_string(c.synth.texture_seed); },
                               [](RunConfig& c, std::string_view k, std::string_view v) {
                                 c.synth.texture_seed = to_u64(k, v);
                               }});
    VLOC_SIZE("synth.num_sequences", synth.num_sequences);
    VLOC_SIZE("synth.num_test_sequences", synth.num_test_sequences);
    VLOC_BOOL("synth.aliasing", synth.aliasing);
    VLOC_DOUBLE("synth.aliasing_width", synth.aliasing_width);
    VLOC_DOUBLE("synth.aliasing_offset", synth.aliasing_offset);

    add("train.task", {[](const RunConfig& c) { return std::string(to_string(c.train.task)); },
                       [](RunConfig& c, std::string_view, std::string_view v) { c.train.task = parse_task(v); }});
    add("train.strategy", {[](const RunConfig& c) { return std::string(to_string(c.train.strategy)); },
                           [](RunConfig& c, std::string_view, std::string_view v) {
                             c.train.strategy = parse_strategy(v);
                           }});
    add("train.loss", {[](const RunConfig& c) { return std::string(to_string(c.train.loss)); },
                       [](RunConfig& c, std::string_view, std::string_view v) { c.train.loss = parse_loss_mode(v); }});
    VLOC_DOUBLE("train.beta", train.beta);
    VLOC_SIZE("train.iterations", train.iterations);
    VLOC_SIZE("train.batch_size", train.batch_size);
    VLOC_DOUBLE("train.learning_rate", train.adam.learning_rate);
    VLOC_DOUBLE("train.adam_beta1", train.adam.beta1);
    VLOC_DOUBLE("train.adam_beta2", train.adam.beta2);
    VLOC_DOUBLE("train.adam_epsilon", train.adam.epsilon);
    add("train.crop", {[](const RunConfig& c) { return std::string(crop_name(c.train_crop)); },
                       [](RunConfig& c, std::string_view k, std::string_view v) {
                         if (v == "random") {
                           c.train_crop = CropMode::Random;
                         } else if (v == "center") {
                           c.train_crop = CropMode::Center;
                         } else {
                           bad_value(k, v, "random|center");
                         }
                       }});
    add("train.init", {[](const RunConfig& c) { return std::string(to_string(c.init)); },
                       [](RunConfig& c, std::string_view, std::string_view v) { c.init = parse_init_mode(v); }});
    VLOC_PATH("train.init_global", init_global);
    VLOC_PATH("train.init_odometry", init_odometry);

    add("eval.split", {[](const RunConfig& c) { return std::string(to_string(c.eval.split)); },
                       [](RunConfig& c, std::string_view k, std::string_view v) {
                         if (v == "train") {
                           c.eval.split = Split::Train;
                         } else if (v == "test") {
                           c.eval.split = Split::Test;
                         } else {
                           bad_value(k, v, "train|test");
                         }
                       }});
    VLOC_BOOL("eval.odometry", eval.odometry);
    add("eval.vo_mode", {[](const RunConfig& c) { return std::string(c.eval.vo.per_pair ? "per-pair" : "windowed"); },
                         [](RunConfig& c, std::string_view k, std::string_view v) {
                           if (v == "windowed") {
                             c.eval.vo.per_pair = false;
                           } else if (v == "per-pair") {
                             c.eval.vo.per_pair = true;
                           } else {
                             bad_value(k, v, "windowed|per-pair");
                           }
                         }});
    add("eval.vo_windows", {[](const RunConfig& c) { return join(c.eval.vo.window_fractions); },
                            [](RunConfig& c, std::string_view k, std::string_view v) {
                              c.eval.vo.window_fractions = to_list<double>(k, v, to_double);
                            }});
    VLOC_SIZE("eval.vo_stride", eval.vo.stride);
    VLOC_SIZE("eval.histogram_bins", eval.histogram_bins);
#undef VLOC_SIZE
#undef VLOC_DOUBLE
#undef VLOC_BOOL
#undef VLOC_PATH
    return t;
  }();
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, key, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return names;
}

void RunConfig::finalize() {
  preprocess.validate();
  network.input_height = preprocess.crop;
  network.input_width = preprocess.crop;
  train.seed = seed;
  network.validate();
  synth.validate();
  if (synth_frames == 0) throw ConfigError("synth.frames must be positive");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(train.adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0) || !(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(train.adam.epsilon > 0.0)) throw ConfigError("train.adam_epsilon must be positive");
  if (!(train.beta > 0.0)) throw ConfigError("train.beta must be positive");
  if (eval.vo.stride == 0) throw ConfigError("eval.vo_stride must be positive");
  if (eval.histogram_bins == 0) throw ConfigError("eval.histogram_bins must be positive");
  if (init != InitMode::Scratch && train.task != Task::Multitask) {
    throw ConfigError("train.init = " + std::string(to_string(init)) + " requires train.task = multitask");
  }
}

std::string RunConfig::to_text(bool include_paths) const {
  std::string out;
  for (const auto& [name, f] : fields()) {
    if (f.path && !include_paths) continue;
    out += name + " = " + f.get(*this) + "\n";
  }
  return out;
}

std::string RunConfig::hash() const { return hash_hex(fnv1a64(to_text(false))); }

std::string RunConfig::model_hash() const {
  std::string text;
  for (const auto& [name, f] : fields()) {
    if (name.starts_with("net.") || name.starts_with("pre.")) text += name + " = " + f.get(*this) + "\n";
  }
  return hash_hex(fnv1a64(text));
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, f] : fields()) {
    if (!f.path) j[name] = f.get(*this);
  }
  return j;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text, std::string_view origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(key, trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

void load_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto kvs = parse_key_values(ss.str(), path.string());
  // Presets first so that explicit keys in the file win.
  for (const auto& [k, v] : kvs) {
    if (k == "preset") {
      for (const std::string& p : split_list(v)) apply_preset(config, p);
    }
  }
  for (const auto& [k, v] : kvs) {
    if (k != "preset") config.set(k, v);
  }
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"m1", "m2",     "m3",     "m4",        "st",           "vo",
                                              "mt-gloc", "mt-vo", "mt-dual", "cambridge", "full-schedule"};
  return names;
}

void apply_preset(RunConfig& c, std::string_view name) {
  const std::size_t last = c.network.num_stages();
  auto global_variant = [&](Activation a, std::size_t fuse, LossMode loss) {
    c.network.activation = a;
    c.network.fuse_prev_pose_at_stage = fuse;
    c.train.task = Task::Global;
    c.train.loss = loss;
    c.train.beta = 1.0;
  };
  if (name == "m1") {
    global_variant(Activation::Relu, 0, LossMode::Beta);
  } else if (name == "m2") {
    global_variant(Activation::Elu, 0, LossMode::Beta);
  } else if (name == "m3") {
    global_variant(Activation::Elu, last, LossMode::GeoBeta);
  } else if (name == "m4" || name == "st") {
    global_variant(Activation::Elu, last, LossMode::Geo);
  } else if (name == "vo") {
    c.network.activation = Activation::Elu;
    c.network.fuse_prev_pose_at_stage = last;
    c.train.task = Task::Odometry;
  } else if (name == "mt-gloc" || name == "mt-vo" || name == "mt-dual") {
    c.network.activation = Activation::Elu;
    c.network.fuse_prev_pose_at_stage = last;
    c.train.task = Task::Multitask;
    c.train.strategy = Strategy::Alternating;
    c.train.loss = LossMode::Geo;
    c.init = parse_init_mode(name);
  } else if (name == "cambridge") {
    c.network.s_x_init = -3.0;
    c.network.s_q_init = -6.5;
  } else if (name == "full-schedule") {
    c.train.iterations = 120000;
    c.train.batch_size = 32;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  if (std::find(c.presets.begin(), c.presets.end(), name) == c.presets.end()) c.presets.emplace_back(name);
}

}  // namespace vloc
