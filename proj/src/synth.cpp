#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vloc/data.hpp"
#include "vloc/error.hpp"
#include "vloc/hash.hpp"
#include "vloc/version.hpp"

namespace vloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::size_t kWavesPerChannel = 12;
constexpr int kMaxRetries = 200;

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 mul(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

Vec3 apply(const Mat3& r, const Vec3& v) {
  return {r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2], r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
          r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2]};
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Camera looks along world +x with image "down" along world -z.
Quat base_orientation() {
  const Mat3 r{{{0.0, 0.0, 1.0}, {-1.0, 0.0, 0.0}, {0.0, -1.0, 0.0}}};
  return rotation_to_quat(r);
}

Quat orientation(double yaw, double pitch, double roll) {
  const Quat qz = quat_from_axis_angle({0.0, 0.0, 1.0}, yaw);
  const Quat qy = quat_from_axis_angle({0.0, 1.0, 0.0}, pitch);
  const Quat qx = quat_from_axis_angle({1.0, 0.0, 0.0}, roll);
  return quat_canonical(quat_mul(quat_mul(quat_mul(qz, qy), qx), base_orientation()));
}

Region camera_box(const SyntheticWorldConfig& c) {
  const double h = c.extent / 2.0;
  const double v = std::min(h, c.vertical_range / 2.0);
  return {{-h, -h, -v}, {h, h, v}};
}

json pose_json(const Pose& p) { return json::array({p.x[0], p.x[1], p.x[2], p.q.w, p.q.x, p.q.y, p.q.z}); }

Pose pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7) throw DataError("manifest: pose must have 7 numbers");
  Pose p;
  p.x = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  p.q = {j[3].get<double>(), j[4].get<double>(), j[5].get<double>(), j[6].get<double>()};
  return p;
}

json region_json(const Region& r) {
  return {{"min", json::array({r.min[0], r.min[1], r.min[2]})}, {"max", json::array({r.max[0], r.max[1], r.max[2]})}};
}

std::string frame_file(const std::string& seq, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "/frame-%06zu.png", index);
  return seq + buf;
}

}  // namespace

bool Region::contains(const Vec3& p) const {
  for (int i = 0; i < 3; ++i) {
    if (p[i] < min[i] || p[i] > max[i]) return false;
  }
  return true;
}

void SyntheticWorldConfig::validate() const {
  if (!(extent > 0.0)) throw ConfigError("synth: extent must be positive");
  if (!(vertical_range >= 0.0)) throw ConfigError("synth: vertical_range must be non-negative");
  if (!(max_step_translation > 0.0)) throw ConfigError("synth: max_step_translation must be positive");
  if (!(max_step_rotation_deg > 0.0)) throw ConfigError("synth: max_step_rotation_deg must be positive");
  if (width < 4 || height < 4) throw ConfigError("synth: render resolution must be at least 4x4");
  if (!(fov_deg > 1.0 && fov_deg < 170.0)) throw ConfigError("synth: fov_deg must lie in (1, 170)");
  if (!(yaw_range_deg > 0.0 && yaw_range_deg <= 360.0)) throw ConfigError("synth: yaw_range_deg must lie in (0, 360]");
  if (num_sequences == 0) throw ConfigError("synth: num_sequences must be positive");
  if (num_test_sequences >= num_sequences) throw ConfigError("synth: at least one training sequence is required");
  if (aliasing) {
    if (!(aliasing_width > 0.0)) throw ConfigError("synth: aliasing_width must be positive");
    if (!(aliasing_offset > aliasing_width)) throw ConfigError("synth: aliasing regions overlap (offset <= width)");
    if (aliasing_offset + aliasing_width > extent) throw ConfigError("synth: aliasing region B leaves the extent");
  }
}

std::pair<Region, Region> SyntheticWorldConfig::aliasing_regions() const {
  Region a = camera_box(*this);
  a.max[0] = a.min[0] + aliasing_width;
  Region b = a;
  b.min[0] += aliasing_offset;
  b.max[0] += aliasing_offset;
  return {a, b};
}

json SyntheticWorldConfig::to_json() const {
  return {{"extent", extent},
          {"vertical_range", vertical_range},
          {"max_step_translation", max_step_translation},
          {"max_step_rotation_deg", max_step_rotation_deg},
          {"width", width},
          {"height", height},
          {"fov_deg", fov_deg},
          {"yaw_range_deg", yaw_range_deg},
          {"texture_seed", texture_seed},
          {"num_sequences", num_sequences},
          {"num_test_sequences", num_test_sequences},
          {"aliasing", aliasing},
          {"aliasing_width", aliasing_width},
          {"aliasing_offset", aliasing_offset}};
}

SyntheticWorldConfig SyntheticWorldConfig::from_json(const json& j) {
  SyntheticWorldConfig c;
  try {
    c.extent = j.value("extent", c.extent);
    c.vertical_range = j.value("vertical_range", c.vertical_range);
    c.max_step_translation = j.value("max_step_translation", c.max_step_translation);
    c.max_step_rotation_deg = j.value("max_step_rotation_deg", c.max_step_rotation_deg);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.fov_deg = j.value("fov_deg", c.fov_deg);
    c.yaw_range_deg = j.value("yaw_range_deg", c.yaw_range_deg);
    c.texture_seed = j.value("texture_seed", c.texture_seed);
    c.num_sequences = j.value("num_sequences", c.num_sequences);
    c.num_test_sequences = j.value("num_test_sequences", c.num_test_sequences);
    c.aliasing = j.value("aliasing", c.aliasing);
    c.aliasing_width = j.value("aliasing_width", c.aliasing_width);
    c.aliasing_offset = j.value("aliasing_offset", c.aliasing_offset);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------- renderer

SyntheticRenderer::SyntheticRenderer(const SyntheticWorldConfig& config) : config_(config) {
  config_.validate();
  room_half_ = config_.extent / 2.0 + 2.0;
  std::mt19937_64 rng(splitmix64(config_.texture_seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& waves : waves_) {
    for (std::size_t i = 0; i < kWavesPerChannel; ++i) {
      Vec3 dir{gauss(rng), gauss(rng), gauss(rng)};
      const double n = std::max(norm(dir), 1e-9);
      const double freq = uniform(rng, 1.0, 5.0);
      waves.push_back({mul(dir, freq / n), uniform(rng, 0.0, 2.0 * std::numbers::pi), uniform(rng, 0.5, 1.0)});
    }
  }
}

double SyntheticRenderer::texture(std::size_t channel, const Vec3& p) const {
  double s = 0.0;
  for (const Wave& w : waves_[channel]) s += w.amplitude * std::sin(w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase);
  return 0.5 + 0.45 * std::tanh(2.0 * s / std::sqrt(static_cast<double>(kWavesPerChannel)));
}

Image SyntheticRenderer::render(const Pose& p) const {
  if (config_.aliasing) {
    const auto [a, b] = config_.aliasing_regions();
    if (b.contains(p.x)) {
      Pose twin = p;
      twin.x[0] -= config_.aliasing_offset;
      return render_unaliased(twin);
    }
  }
  return render_unaliased(p);
}

Image SyntheticRenderer::render_unaliased(const Pose& p) const {
  const std::size_t h = config_.height;
  const std::size_t w = config_.width;
  const Mat3 r = quat_to_rotation(quat_normalize(p.q));
  const double f = (w / 2.0) / std::tan(config_.fov_deg * kDeg / 2.0);
  Image img(3, h, w);
  for (std::size_t py = 0; py < h; ++py) {
    for (std::size_t px = 0; px < w; ++px) {
      const Vec3 ray_cam{(px + 0.5 - w / 2.0) / f, (py + 0.5 - h / 2.0) / f, 1.0};
      const Vec3 d = apply(r, ray_cam);
      double t = 1e300;
      int face = 0;
      for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) < 1e-12) continue;
        const double wall = d[k] > 0 ? room_half_ : -room_half_;
        const double tk = (wall - p.x[k]) / d[k];
        if (tk > 0 && tk < t) {
          t = tk;
          face = 2 * k + (d[k] > 0 ? 1 : 0);
        }
      }
      const Vec3 hit = add(p.x, mul(d, t));
      const double dist = t * norm(d);
      const double shade = (0.8 + 0.04 * face) / (1.0 + 0.05 * dist);
      for (std::size_t c = 0; c < 3; ++c) img.at(c, py, px) = std::clamp(texture(c, hit) * shade, 0.0, 1.0);
    }
  }
  return img;
}

// ------------------------------------------------------------ generator

std::string SyntheticDataset::scene_hash() const {
  json j = {{"config", config.to_json()}, {"seed", seed}};
  json seqs = json::array();
  for (const Sequence& s : sequences) {
    json poses = json::array();
    for (const FrameRecord& f : s.frames) poses.push_back(pose_json(f.pose));
    seqs.push_back({{"id", s.id}, {"split", to_string(s.split)}, {"poses", poses}});
  }
  j["sequences"] = seqs;
  std::uint64_t h = fnv1a64(j.dump());
  for (const Sequence& s : sequences) {
    for (const Image& img : s.images) {
      std::string bytes(img.pixels.size(), '\0');
      for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        bytes[i] = static_cast<char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
      }
      h = fnv1a64(bytes, h);
    }
  }
  return hash_hex(h);
}

json SyntheticDataset::manifest() const {
  json j;
  j["schema_version"] = std::string(kLibraryVersion);
  j["kind"] = "vlocnet-synthetic";
  j["config"] = config.to_json();
  j["seed"] = seed;
  j["scene_hash"] = scene_hash();
  if (config.aliasing) {
    const auto [a, b] = config.aliasing_regions();
    j["aliasing_regions"] = json::array({region_json(a), region_json(b)});
    json pairs = json::array();
    for (const AliasPair& p : alias_pairs) {
      pairs.push_back({{"sequence", sequences[p.sequence].id},
                       {"frame", sequences[p.sequence].frames[p.frame].frame_index},
                       {"twin_pose", pose_json(p.twin)}});
    }
    j["alias_pairs"] = pairs;
  }
  json seqs = json::array();
  for (const Sequence& s : sequences) {
    json frames = json::array();
    for (const FrameRecord& f : s.frames) {
      frames.push_back({{"index", f.frame_index}, {"image", frame_file(s.id, f.frame_index)}, {"pose", pose_json(f.pose)}});
    }
    seqs.push_back({{"id", s.id}, {"split", to_string(s.split)}, {"frames", frames}});
  }
  j["sequences"] = seqs;
  return j;
}

SyntheticDataset synth_generate(const SyntheticWorldConfig& config, std::size_t n_frames, std::uint64_t seed) {
  config.validate();
  if (n_frames == 0) throw ConfigError("synth: n_frames must be positive");
  const SyntheticRenderer renderer(config);
  const Region box = camera_box(config);
  const double vmax = 0.95 * config.max_step_translation;
  const double rmax = config.max_step_rotation_deg * kDeg;
  const double tilt_limit = 10.0 * kDeg;

  SyntheticDataset ds;
  ds.config = config;
  ds.seed = seed;
  std::mt19937_64 rng(splitmix64(seed ^ 0x5eedULL));
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Smooth random walk of n_frames poses inside `region`.
  auto walk = [&](const Region& region, const std::string& id) {
    auto random_point = [&] {
      return Vec3{uniform(rng, region.min[0], region.max[0]), uniform(rng, region.min[1], region.max[1]),
                  uniform(rng, region.min[2], region.max[2])};
    };
    const double yaw_half = config.yaw_range_deg * kDeg / 2.0;
    const bool yaw_limited = config.yaw_range_deg < 360.0;
    double yaw = uniform(rng, -yaw_half, yaw_half);
    double pitch = 0.0;
    double roll = 0.0;
    double yaw_rate = 0.0;
    Vec3 velocity{0.0, 0.0, 0.0};
    Vec3 waypoint = random_point();
    Pose pose{random_point(), orientation(yaw, pitch, roll)};
    std::vector<Pose> poses{pose};
    for (std::size_t k = 1; k < n_frames; ++k) {
      bool placed = false;
      double damping = 1.0;
      for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt, damping *= 0.5) {
        if (norm(sub(waypoint, pose.x)) < 0.3 || attempt > 0) waypoint = random_point();
        const Vec3 toward = sub(waypoint, pose.x);
        const double dn = std::max(norm(toward), 1e-9);
        Vec3 v = add(mul(velocity, 0.85 * damping), mul(toward, std::min(0.15 * vmax, dn) / dn));
        v = add(v, mul(Vec3{0.1 * vmax * gauss(rng), 0.1 * vmax * gauss(rng), 0.05 * vmax * gauss(rng)}, damping));
        const double vn = norm(v);
        if (vn > vmax) v = mul(v, vmax / vn);
        const Vec3 next = add(pose.x, v);
        if (!region.contains(next)) continue;

        double new_rate = std::clamp(0.9 * yaw_rate + 0.15 * rmax * gauss(rng), -0.5 * rmax, 0.5 * rmax);
        if (yaw_limited) new_rate = std::clamp(new_rate, -yaw_half - yaw, yaw_half - yaw);
        const double dp = std::clamp(-0.1 * pitch + 0.1 * rmax * gauss(rng), -0.25 * rmax, 0.25 * rmax);
        const double dr = std::clamp(-0.1 * roll + 0.1 * rmax * gauss(rng), -0.25 * rmax, 0.25 * rmax);
        const double new_pitch = std::clamp(pitch + dp, -tilt_limit, tilt_limit);
        const double new_roll = std::clamp(roll + dr, -tilt_limit, tilt_limit);
        const Pose target{next, orientation(yaw + new_rate, new_pitch, new_roll)};
        const RelativeMotion motion = relative_motion(target, pose);

        velocity = v;
        yaw_rate = new_rate;
        yaw += new_rate;
        pitch = new_pitch;
        roll = new_roll;
        pose = compose(pose, motion);
        pose.q = quat_canonical(pose.q);
        placed = true;
      }
      if (!placed) throw DataError("synth: trajectory of " + id + " left the world extent at frame " + std::to_string(k));
      poses.push_back(pose);
    }
    return poses;
  };

  auto add_sequence = [&](const std::vector<Pose>& poses) {
    const std::size_t s = ds.sequences.size();
    Sequence seq;
    char id[16];
    std::snprintf(id, sizeof(id), "seq-%02zu", s + 1);
    seq.id = id;
    seq.split = s + config.num_test_sequences >= config.num_sequences ? Split::Test : Split::Train;
    for (std::size_t k = 0; k < poses.size(); ++k) {
      seq.frames.push_back({seq.id, k, std::string(), poses[k]});
      seq.images.push_back(quantize8(renderer.render(poses[k])));
      if (config.aliasing && config.aliasing_regions().second.contains(poses[k].x)) {
        Pose twin = poses[k];
        twin.x[0] -= config.aliasing_offset;
        ds.alias_pairs.push_back({s, k, twin});
      }
    }
    ds.sequences.push_back(std::move(seq));
  };

  // Aliasing mode emits sequences in twins: a walk inside region A followed
  // by the same walk moved into region B. A trailing odd sequence roams the
  // whole box.
  while (ds.sequences.size() < config.num_sequences) {
    const std::string next_id = "sequence " + std::to_string(ds.sequences.size() + 1);
    if (config.aliasing && ds.sequences.size() + 2 <= config.num_sequences) {
      const Region a = config.aliasing_regions().first;
      const std::vector<Pose> poses = walk(a, next_id);
      std::vector<Pose> moved = poses;
      for (Pose& p : moved) p.x[0] += config.aliasing_offset;
      add_sequence(poses);
      add_sequence(moved);
    } else {
      add_sequence(walk(box, next_id));
    }
  }
  return ds;
}

void write_synthetic_dataset(const fs::path& dir, const SyntheticDataset& dataset, bool overwrite) {
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path) && !overwrite) {
    throw ConfigError("refusing to overwrite existing dataset at " + dir.string() + " (use --force)");
  }
  fs::create_directories(dir);
  const json manifest = dataset.manifest();
  for (std::size_t s = 0; s < dataset.sequences.size(); ++s) {
    const Sequence& seq = dataset.sequences[s];
    fs::create_directories(dir / seq.id);
    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
      write_png(dir / frame_file(seq.id, seq.frames[k].frame_index), seq.images.at(k));
    }
  }
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw DataError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
}

SyntheticDataset load_synthetic_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw DataError("missing dataset manifest " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  SyntheticDataset ds;
  try {
    if (j.value("kind", std::string()) != "vlocnet-synthetic") throw DataError(manifest_path.string() + ": not a synthetic dataset manifest");
    ds.config = SyntheticWorldConfig::from_json(j.at("config"));
    ds.seed = j.at("seed").get<std::uint64_t>();
    for (const json& js : j.at("sequences")) {
      Sequence seq;
      seq.id = js.at("id").get<std::string>();
      seq.split = js.at("split").get<std::string>() == "test" ? Split::Test : Split::Train;
      std::size_t last = 0;
      for (const json& jf : js.at("frames")) {
        FrameRecord rec;
        rec.sequence_id = seq.id;
        rec.frame_index = jf.at("index").get<std::size_t>();
        if (!seq.frames.empty() && rec.frame_index <= last) {
          throw DataError(manifest_path.string() + ": frame indices of " + seq.id + " are not increasing");
        }
        last = rec.frame_index;
        rec.image_path = (dir / jf.at("image").get<std::string>()).string();
        rec.pose = pose_from_json(jf.at("pose"));
        seq.frames.push_back(rec);
      }
      load_images(seq);
      ds.sequences.push_back(std::move(seq));
    }
    if (j.contains("alias_pairs")) {
      for (const json& jp : j.at("alias_pairs")) {
        const std::string sid = jp.at("sequence").get<std::string>();
        const std::size_t index = jp.at("frame").get<std::size_t>();
        for (std::size_t s = 0; s < ds.sequences.size(); ++s) {
          if (ds.sequences[s].id != sid) continue;
          for (std::size_t k = 0; k < ds.sequences[s].frames.size(); ++k) {
            if (ds.sequences[s].frames[k].frame_index == index) ds.alias_pairs.push_back({s, k, pose_from_json(jp.at("twin_pose"))});
          }
        }
      }
    }
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  const std::string recorded = j.value("scene_hash", std::string());
  if (!recorded.empty() && recorded != ds.scene_hash()) {
    throw DataError(manifest_path.string() + ": scene hash mismatch (files modified?)");
  }
  return ds;
}

std::string directory_hash(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), dir).generic_string());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a64("");
  for (const std::string& rel : files) {
    std::ifstream in(dir / rel, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    h = fnv1a64(rel, h);
    h = fnv1a64(ss.str(), h);
  }
  return hash_hex(h);
}

}  // namespace vloc
