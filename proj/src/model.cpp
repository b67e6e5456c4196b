#include "vloc/model.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "vloc/error.hpp"

namespace vloc {

std::string_view to_string(Activation a) { return a == Activation::Elu ? "elu" : "relu"; }

Activation parse_activation(std::string_view name) {
  if (name == "elu") return Activation::Elu;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected elu|relu)");
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Shared:
      return "shared";
    case ParamGroup::GlobalOnly:
      return "global_only";
    case ParamGroup::OdomOnly:
      return "odom_only";
    case ParamGroup::HeadsGlobal:
      return "heads_global";
    case ParamGroup::HeadsOdom:
      return "heads_odom";
    case ParamGroup::Fusion:
      return "fusion";
    case ParamGroup::ScaleGlobal:
      return "scale_global";
    case ParamGroup::ScaleVo:
      return "scale_vo";
  }
  return "?";
}

ParamGroup parse_param_group(std::string_view name) {
  for (ParamGroup g : {ParamGroup::Shared, ParamGroup::GlobalOnly, ParamGroup::OdomOnly, ParamGroup::HeadsGlobal,
                       ParamGroup::HeadsOdom, ParamGroup::Fusion, ParamGroup::ScaleGlobal, ParamGroup::ScaleVo}) {
    if (to_string(g) == name) return g;
  }
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// NetworkConfig

std::size_t NetworkConfig::channels_at(std::size_t stage) const {
  if (stage == 1) return stem_channels;
  return stage_channels.at(stage - 2);
}

namespace {

std::size_t halve(std::size_t n) { return (n - 1) / 2 + 1; }

}  // namespace

std::size_t NetworkConfig::height_at(std::size_t stage) const {
  std::size_t h = halve(input_height);
  for (std::size_t k = 3; k <= stage; ++k) h = halve(h);
  return h;
}

std::size_t NetworkConfig::width_at(std::size_t stage) const {
  std::size_t w = halve(input_width);
  for (std::size_t k = 3; k <= stage; ++k) w = halve(w);
  return w;
}

std::size_t NetworkConfig::fc4_dim() const {
  if (fuse_prev_pose_at_stage == 0) return 0;
  const std::size_t before = fuse_prev_pose_at_stage - 1;
  return height_at(before) * width_at(before) * fusion_channels;
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("network config: " + msg); };
  if (input_height == 0 || input_width == 0 || input_channels == 0) fail("input dimensions must be positive");
  if (stem_channels == 0) fail("stem_channels must be positive");
  if (stage_channels.size() < 2) fail("need at least two residual stages");
  if (units_per_stage.size() != stage_channels.size()) {
    fail("units_per_stage has " + std::to_string(units_per_stage.size()) + " entries but stage_channels has " +
         std::to_string(stage_channels.size()));
  }
  for (std::size_t c : stage_channels)
    if (c == 0) fail("stage channels must be positive");
  for (std::size_t u : units_per_stage)
    if (u == 0) fail("every stage needs at least one unit");
  const std::size_t last = num_stages();
  if (share_up_to_stage > last - 1) {
    fail("share_up_to_stage must lie in [0, " + std::to_string(last - 1) + "], got " +
         std::to_string(share_up_to_stage));
  }
  if (fuse_prev_pose_at_stage != 0 && (fuse_prev_pose_at_stage < 2 || fuse_prev_pose_at_stage > last)) {
    fail("fuse_prev_pose_at_stage must be 0 or in [2, " + std::to_string(last) + "], got " +
         std::to_string(fuse_prev_pose_at_stage));
  }
  if (fuse_prev_pose_at_stage != 0 && fusion_channels == 0) fail("fusion_channels must be positive");
  if (fc1_dim == 0) fail("fc1_dim must be positive");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) fail("dropout_keep must lie in (0, 1]");
  for (double s : {s_x_init, s_q_init, s_x_vo_init, s_q_vo_init})
    if (!std::isfinite(s)) fail("scale initial values must be finite");
}

nlohmann::json NetworkConfig::to_json() const {
  return {{"input_height", input_height},
          {"input_width", input_width},
          {"input_channels", input_channels},
          {"stem_channels", stem_channels},
          {"stage_channels", stage_channels},
          {"units_per_stage", units_per_stage},
          {"share_up_to_stage", share_up_to_stage},
          {"fuse_prev_pose_at_stage", fuse_prev_pose_at_stage},
          {"fusion_channels", fusion_channels},
          {"fc1_dim", fc1_dim},
          {"dropout_keep", dropout_keep},
          {"activation", std::string(to_string(activation))},
          {"s_x_init", s_x_init},
          {"s_q_init", s_q_init},
          {"s_x_vo_init", s_x_vo_init},
          {"s_q_vo_init", s_q_vo_init}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.input_height = j.at("input_height").get<std::size_t>();
    c.input_width = j.at("input_width").get<std::size_t>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.stem_channels = j.at("stem_channels").get<std::size_t>();
    c.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
    c.units_per_stage = j.at("units_per_stage").get<std::vector<std::size_t>>();
    c.share_up_to_stage = j.at("share_up_to_stage").get<std::size_t>();
    c.fuse_prev_pose_at_stage = j.at("fuse_prev_pose_at_stage").get<std::size_t>();
    c.fusion_channels = j.at("fusion_channels").get<std::size_t>();
    c.fc1_dim = j.at("fc1_dim").get<std::size_t>();
    c.dropout_keep = j.at("dropout_keep").get<double>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.s_x_init = j.at("s_x_init").get<double>();
    c.s_q_init = j.at("s_q_init").get<double>();
    c.s_x_vo_init = j.at("s_x_vo_init").get<double>();
    c.s_q_vo_init = j.at("s_q_vo_init").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Layout

struct ParamInit {
  enum class Kind { Gaussian, Constant };
  Kind kind = Kind::Constant;
  double value = 0.0;  // stddev for Gaussian
};

class ModelLayoutBuilder {
 public:
  using Factory = std::function<Tensor(const std::string& name, const Shape& shape, ParamInit init)>;

  static ModelParams make(const NetworkConfig& config, const Factory& factory) {
    config.validate();
    ModelLayoutBuilder b(config, factory);
    b.build();
    return std::move(b.params_);
  }

 private:
  ModelLayoutBuilder(const NetworkConfig& config, const Factory& factory) : factory_(factory) {
    params_.config_ = config;
  }

  Tensor param(const std::string& name, ParamGroup group, const Shape& shape, ParamInit init) {
    Tensor t = factory_(name, shape, init);
    t.set_requires_grad(true);
    params_.entries_.push_back({name, group, t});
    return t;
  }

  ConvAffine conv(const std::string& name, ParamGroup group, std::size_t in, std::size_t out, std::size_t k,
                  std::size_t stride) {
    ConvAffine c;
    const double std = std::sqrt(2.0 / static_cast<double>(in * k * k));
    c.weight = param(name + ".w", group, {out, in, k, k}, {ParamInit::Kind::Gaussian, std});
    c.scale = param(name + ".scale", group, {out}, {ParamInit::Kind::Constant, 1.0});
    c.bias = param(name + ".bias", group, {out}, {ParamInit::Kind::Constant, 0.0});
    c.stride = stride;
    return c;
  }

  ResidualStage stage(const std::string& prefix, ParamGroup group, std::size_t stage_index, std::size_t in) {
    const NetworkConfig& cfg = params_.config_;
    const std::size_t out = cfg.channels_at(stage_index);
    const std::size_t width = std::max<std::size_t>(1, out / 4);
    const std::size_t units = cfg.units_per_stage.at(stage_index - 2);
    ResidualStage s;
    for (std::size_t u = 0; u < units; ++u) {
      const std::string name = prefix + ".unit" + std::to_string(u);
      const std::size_t unit_in = u == 0 ? in : out;
      const std::size_t stride = (u == 0 && stage_index >= 3) ? 2 : 1;
      Bottleneck b;
      b.reduce = conv(name + ".reduce", group, unit_in, width, 1, 1);
      b.spatial = conv(name + ".spatial", group, width, width, 3, stride);
      b.expand = conv(name + ".expand", group, width, out, 1, 1);
      if (stride != 1 || unit_in != out) b.projection = conv(name + ".projection", group, unit_in, out, 1, stride);
      s.units.push_back(std::move(b));
    }
    return s;
  }

  Dense dense(const std::string& name, ParamGroup group, std::size_t in, std::size_t out,
              std::vector<double> bias_init = {}) {
    Dense d;
    d.weight = param(name + ".w", group, {in, out}, {ParamInit::Kind::Gaussian, std::sqrt(1.0 / static_cast<double>(in))});
    d.bias = param(name + ".b", group, {out}, {ParamInit::Kind::Constant, 0.0});
    if (!bias_init.empty()) std::copy(bias_init.begin(), bias_init.end(), d.bias.mutable_data().begin());
    return d;
  }

  Heads heads(const std::string& prefix, ParamGroup group, std::size_t in) {
    const std::size_t fc1 = params_.config_.fc1_dim;
    Heads h;
    h.fc1 = dense(prefix + ".fc1", group, in, fc1);
    h.fc_x = dense(prefix + ".fc_x", group, fc1, 3);
    h.fc_q = dense(prefix + ".fc_q", group, fc1, 4, {1.0, 0.0, 0.0, 0.0});
    return h;
  }

  static std::string stage_name(const std::string& stream, std::size_t k) {
    return k == 1 ? stream + ".stem" : stream + ".stage" + std::to_string(k);
  }

  void build() {
    const NetworkConfig& cfg = params_.config_;
    const std::size_t last = cfg.num_stages();
    const std::size_t share = cfg.share_up_to_stage;
    const std::size_t fuse = cfg.fuse_prev_pose_at_stage;
    auto global_group = [&](std::size_t k) { return k <= share ? ParamGroup::Shared : ParamGroup::GlobalOnly; };
    auto stage_input = [&](std::size_t k, bool fused) {
      return cfg.channels_at(k - 1) + (fused && k == fuse ? cfg.fusion_channels : 0);
    };

    // Global stream, stages 1..L.
    params_.global_.stem = conv(stage_name("global", 1), global_group(1), cfg.input_channels, cfg.stem_channels, 3, 2);
    for (std::size_t k = 2; k <= last; ++k) {
      params_.global_.stages.push_back(stage(stage_name("global", k), global_group(k), k, stage_input(k, true)));
    }

    // Current-frame odometry stream, stages 1..L-1; the shared prefix aliases
    // the global stream.
    Trunk& cur = params_.odom_current_;
    cur.stem = share >= 1 ? params_.global_.stem
                          : conv(stage_name("odom_cur", 1), ParamGroup::OdomOnly, cfg.input_channels, cfg.stem_channels, 3, 2);
    for (std::size_t k = 2; k < last; ++k) {
      if (k <= share) {
        cur.stages.push_back(params_.global_.stages[k - 2]);
      } else {
        cur.stages.push_back(stage(stage_name("odom_cur", k), ParamGroup::OdomOnly, k, stage_input(k, false)));
      }
    }

    // Previous-frame odometry stream, never shared.
    Trunk& prev = params_.odom_previous_;
    prev.stem = conv(stage_name("odom_prev", 1), ParamGroup::OdomOnly, cfg.input_channels, cfg.stem_channels, 3, 2);
    for (std::size_t k = 2; k < last; ++k) {
      prev.stages.push_back(stage(stage_name("odom_prev", k), ParamGroup::OdomOnly, k, stage_input(k, false)));
    }

    params_.odom_merge_ = stage(stage_name("odom", last), ParamGroup::OdomOnly, last, 2 * cfg.channels_at(last - 1));

    params_.global_heads_ = heads("global", ParamGroup::HeadsGlobal, cfg.channels_at(last));
    params_.odom_heads_ = heads("odom", ParamGroup::HeadsOdom, cfg.channels_at(last));
    if (fuse != 0) params_.fusion_ = dense("fc4", ParamGroup::Fusion, 7, cfg.fc4_dim());

    auto scalar = [&](const std::string& name, ParamGroup g, double v) {
      return param(name, g, {1}, {ParamInit::Kind::Constant, v});
    };
    params_.scale_global_ = {scalar("scale_global.s_x", ParamGroup::ScaleGlobal, cfg.s_x_init),
                             scalar("scale_global.s_q", ParamGroup::ScaleGlobal, cfg.s_q_init)};
    params_.scale_vo_ = {scalar("scale_vo.s_x", ParamGroup::ScaleVo, cfg.s_x_vo_init),
                         scalar("scale_vo.s_q", ParamGroup::ScaleVo, cfg.s_q_vo_init)};
  }

  const Factory& factory_;
  ModelParams params_;
};

ModelParams ModelParams::build(const NetworkConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return ModelLayoutBuilder::make(config, [&](const std::string&, const Shape& shape, ParamInit init) {
    std::vector<double> values(shape_numel(shape), init.value);
    if (init.kind == ParamInit::Kind::Gaussian) {
      for (double& v : values) v = init.value * normal(rng);
    }
    return Tensor(shape, std::move(values));
  });
}

ModelParams ModelParams::clone() const {
  std::map<std::string, const Tensor*, std::less<>> by_name;
  for (const Entry& e : entries_) by_name.emplace(e.name, &e.value);
  return ModelLayoutBuilder::make(config_, [&](const std::string& name, const Shape& shape, ParamInit) {
    const Tensor& src = *by_name.at(name);
    return Tensor(shape, {src.data().begin(), src.data().end()});
  });
}

std::vector<Tensor> ModelParams::group(ParamGroup g) const {
  std::vector<Tensor> out;
  for (const Entry& e : entries_)
    if (e.group == g) out.push_back(e.value);
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.value);
  return out;
}

const ModelParams::Entry* ModelParams::find(std::string_view name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.numel();
  return n;
}

void ModelParams::zero_grad() const {
  for (const Entry& e : entries_) {
    Tensor t = e.value;
    t.zero_grad();
  }
}

void ModelParams::assign(std::string_view name, std::span<const double> values) {
  const Entry* e = find(name);
  if (e == nullptr) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  Tensor t = e->value;
  if (t.numel() != values.size()) {
    throw ShapeError("assign '" + std::string(name) + "': expected " + std::to_string(t.numel()) + " values, got " +
                     std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), t.mutable_data().begin());
}

// ---------------------------------------------------------------------------
// Forward

namespace {

struct Context {
  const NetworkConfig& config;
  const ForwardOptions& options;
};

Tensor activate(const Tensor& x, const Context& ctx) {
  return ctx.config.activation == Activation::Elu ? elu(x) : relu(x);
}

Tensor apply_conv(const Tensor& x, const ConvAffine& c, bool with_activation, const Context& ctx) {
  Tensor y = conv2d(x, c.weight, {c.stride, Padding::Same});
  y = channel_affine(y, c.scale, c.bias);
  return with_activation ? activate(y, ctx) : y;
}

Tensor apply_unit(const Tensor& x, const Bottleneck& unit, const Context& ctx) {
  Tensor y = apply_conv(x, unit.reduce, true, ctx);
  y = apply_conv(y, unit.spatial, true, ctx);
  y = apply_conv(y, unit.expand, false, ctx);
  const Tensor shortcut = unit.projection ? apply_conv(x, *unit.projection, false, ctx) : x;
  return activate(add(y, shortcut), ctx);
}

Tensor apply_stage(Tensor x, const ResidualStage& stage, const Context& ctx) {
  for (const Bottleneck& unit : stage.units) x = apply_unit(x, unit, ctx);
  return x;
}

// Runs stages [from, to] of a trunk. `fused` is concatenated to the input of
// stage `fuse_stage` when given.
Tensor run_trunk(const Trunk& trunk, Tensor x, std::size_t from, std::size_t to, const Tensor* fused,
                 std::size_t fuse_stage, const Context& ctx) {
  for (std::size_t k = from; k <= to; ++k) {
    if (fused != nullptr && k == fuse_stage) x = concat_channels(x, *fused);
    x = k == 1 ? apply_conv(x, trunk.stem, true, ctx) : apply_stage(x, trunk.stages.at(k - 2), ctx);
  }
  return x;
}

PoseBatch apply_heads(const Tensor& features, const Heads& heads, const Context& ctx) {
  Tensor h = global_avg_pool(features);
  h = activate(linear(h, heads.fc1.weight, heads.fc1.bias), ctx);
  if (ctx.options.training && ctx.config.dropout_keep < 1.0) {
    if (ctx.options.rng == nullptr) throw Error("forward: training mode needs an rng for dropout");
    h = dropout(h, ctx.config.dropout_keep, true, *ctx.options.rng);
  }
  return {linear(h, heads.fc_x.weight, heads.fc_x.bias),
          normalize_rows(linear(h, heads.fc_q.weight, heads.fc_q.bias))};
}

void check_images(const NetworkConfig& cfg, const Tensor& images, const char* what) {
  const Shape expected{images.rank() == 4 ? images.dim(0) : 0, cfg.input_channels, cfg.input_height, cfg.input_width};
  if (images.rank() != 4 || images.shape() != expected) {
    throw ShapeError(std::string(what) + ": image batch " + shape_string(images.shape()) +
                     " does not match the configured resolution " +
                     shape_string({cfg.input_channels, cfg.input_height, cfg.input_width}));
  }
}

Tensor fusion_features(const ModelParams& params, const Tensor& prev_pose, std::size_t batch) {
  const NetworkConfig& cfg = params.config();
  if (!prev_pose.defined() || prev_pose.shape() != Shape{batch, 7}) {
    throw ShapeError("forward_global: previous pose must be [N,7] with N=" + std::to_string(batch) + ", got " +
                     (prev_pose.defined() ? shape_string(prev_pose.shape()) : std::string("undefined")));
  }
  const Dense& fc4 = *params.fusion();
  const std::size_t before = cfg.fuse_prev_pose_at_stage - 1;
  return reshape(linear(prev_pose, fc4.weight, fc4.bias),
                 {batch, cfg.fusion_channels, cfg.height_at(before), cfg.width_at(before)});
}

// Zero placeholder for the fusion channels when the fusion stage lies inside
// the part of the trunk that the odometry stream shares.
std::optional<Tensor> odom_fusion_placeholder(const NetworkConfig& cfg, std::size_t batch) {
  const std::size_t fuse = cfg.fuse_prev_pose_at_stage;
  if (fuse == 0 || fuse > cfg.share_up_to_stage) return std::nullopt;
  return Tensor::zeros({batch, cfg.fusion_channels, cfg.height_at(fuse - 1), cfg.width_at(fuse - 1)});
}

}  // namespace

PoseBatch forward_global(const ModelParams& params, const Tensor& images, const Tensor& prev_pose,
                         const ForwardOptions& options) {
  const NetworkConfig& cfg = params.config();
  const Context ctx{cfg, options};
  check_images(cfg, images, "forward_global");
  const std::size_t batch = images.dim(0);
  std::optional<Tensor> fused;
  if (cfg.fuse_prev_pose_at_stage != 0) fused = fusion_features(params, prev_pose, batch);
  const Tensor features = run_trunk(params.global_trunk(), images, 1, cfg.num_stages(),
                                    fused ? &*fused : nullptr, cfg.fuse_prev_pose_at_stage, ctx);
  return apply_heads(features, params.global_heads(), ctx);
}

PoseBatch forward_odometry(const ModelParams& params, const Tensor& images_t, const Tensor& images_prev,
                           const ForwardOptions& options) {
  const NetworkConfig& cfg = params.config();
  const Context ctx{cfg, options};
  check_images(cfg, images_t, "forward_odometry");
  check_images(cfg, images_prev, "forward_odometry");
  if (images_t.dim(0) != images_prev.dim(0)) throw ShapeError("forward_odometry: batch size mismatch");
  const std::size_t batch = images_t.dim(0);
  const std::size_t last = cfg.num_stages();

  const std::optional<Tensor> placeholder = odom_fusion_placeholder(cfg, batch);
  const Tensor cur = run_trunk(params.odom_current_trunk(), images_t, 1, last - 1,
                               placeholder ? &*placeholder : nullptr, cfg.fuse_prev_pose_at_stage, ctx);
  const Tensor prev = run_trunk(params.odom_previous_trunk(), images_prev, 1, last - 1, nullptr, 0, ctx);
  const Tensor merged = apply_stage(concat_channels(cur, prev), params.odom_merge_stage(), ctx);
  return apply_heads(merged, params.odom_heads(), ctx);
}

JointPrediction forward_joint(const ModelParams& params, const Tensor& images_t, const Tensor& images_prev,
                              const Tensor& prev_pose, const ForwardOptions& options) {
  const NetworkConfig& cfg = params.config();
  const Context ctx{cfg, options};
  check_images(cfg, images_t, "forward_joint");
  check_images(cfg, images_prev, "forward_joint");
  if (images_t.dim(0) != images_prev.dim(0)) throw ShapeError("forward_joint: batch size mismatch");
  const std::size_t batch = images_t.dim(0);
  const std::size_t last = cfg.num_stages();
  const std::size_t fuse = cfg.fuse_prev_pose_at_stage;

  // Stages both streams evaluate identically on I_t.
  std::size_t common = std::min(cfg.share_up_to_stage, last - 1);
  if (fuse != 0) common = std::min(common, fuse - 1);
  const Tensor prefix = run_trunk(params.global_trunk(), images_t, 1, common, nullptr, 0, ctx);

  std::optional<Tensor> fused;
  if (fuse != 0) fused = fusion_features(params, prev_pose, batch);
  const Tensor global_features =
      run_trunk(params.global_trunk(), prefix, common + 1, last, fused ? &*fused : nullptr, fuse, ctx);

  const std::optional<Tensor> placeholder = odom_fusion_placeholder(cfg, batch);
  const Tensor cur = run_trunk(params.odom_current_trunk(), prefix, common + 1, last - 1,
                               placeholder ? &*placeholder : nullptr, fuse, ctx);
  const Tensor prev = run_trunk(params.odom_previous_trunk(), images_prev, 1, last - 1, nullptr, 0, ctx);

  JointPrediction out;
  out.global = apply_heads(global_features, params.global_heads(), ctx);
  const Tensor merged = apply_stage(concat_channels(cur, prev), params.odom_merge_stage(), ctx);
  out.odometry = apply_heads(merged, params.odom_heads(), ctx);
  return out;
}

// ---------------------------------------------------------------------------

Tensor pose_tensor(std::span<const Pose> poses) {
  if (poses.empty()) throw ShapeError("pose_tensor: empty pose list");
  std::vector<double> v;
  v.reserve(poses.size() * 7);
  for (const Pose& p : poses) {
    v.insert(v.end(), p.x.begin(), p.x.end());
    v.insert(v.end(), {p.q.w, p.q.x, p.q.y, p.q.z});
  }
  return Tensor({poses.size(), 7}, std::move(v));
}

std::vector<Pose> poses_from_batch(const PoseBatch& batch) {
  const std::size_t n = batch.x.dim(0);
  const auto xs = batch.x.data();
  const auto qs = batch.q.data();
  std::vector<Pose> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].x = {xs[3 * i], xs[3 * i + 1], xs[3 * i + 2]};
    out[i].q = {qs[4 * i], qs[4 * i + 1], qs[4 * i + 2], qs[4 * i + 3]};
  }
  return out;
}

std::vector<RelativeMotion> motions_from_batch(const PoseBatch& batch) {
  std::vector<RelativeMotion> out;
  for (const Pose& p : poses_from_batch(batch)) out.push_back({p.x, p.q});
  return out;
}

}  // namespace vloc
