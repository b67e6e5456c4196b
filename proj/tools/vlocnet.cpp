#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vloc/checkpoint.hpp"
#include "vloc/config.hpp"
#include "vloc/error.hpp"
#include "vloc/gradcheck.hpp"
#include "vloc/pipeline.hpp"
#include "vloc/version.hpp"

namespace fs = std::filesystem;
using namespace vloc;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CommonFlags {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> presets;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_file, "key = value config file");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--preset", f.presets, "preset name(s), comma separated")->delimiter(',');
  cmd->add_option("--set", f.overrides, "KEY=VALUE override (repeatable)");
}

// Layering: presets (file, then flags), file keys, --set, dedicated flags.
RunConfig build_config(const CommonFlags& f, RunConfig config = {}) {
  std::vector<std::pair<std::string, std::string>> file_keys;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + f.config_file);
    std::ostringstream ss;
    ss << in.rdbuf();
    file_keys = parse_key_values(ss.str(), f.config_file);
  }
  std::vector<std::string> presets;
  for (const auto& [k, v] : file_keys) {
    if (k != "preset") continue;
    RunConfig probe;
    probe.set("preset", v);
    presets.insert(presets.end(), probe.presets.begin(), probe.presets.end());
  }
  presets.insert(presets.end(), f.presets.begin(), f.presets.end());
  for (const std::string& p : presets) apply_preset(config, p);
  for (const auto& [k, v] : file_keys) {
    if (k != "preset") config.set(k, v);
  }
  for (const std::string& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) config.seed = *f.seed;
  if (!f.out.empty()) config.out = f.out;
  config.finalize();
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string provenance(const RunConfig& c) {
  return "# config_hash=" + c.hash() + " seed=" + std::to_string(c.seed) + " version=" + std::string(kLibraryVersion) +
         "\n";
}

void write_effective_config(const fs::path& dir, const RunConfig& c) {
  write_text(dir / "config.txt", provenance(c) + c.to_text(true));
}

std::string require_out(const RunConfig& c) {
  if (c.out.empty()) throw ConfigError("an output directory is required (--out)");
  return c.out;
}

StepObserver progress(std::size_t iterations) {
  const std::size_t every = std::max<std::size_t>(1, iterations / 20);
  return [every, iterations](std::size_t step, Phase, const LossRecord& r) {
    if ((step + 1) % every == 0 || step + 1 == iterations) {
      std::fprintf(stderr, "step %zu/%zu loss %.6g\n", step + 1, iterations, r.total);
    }
  };
}

// ------------------------------------------------------------------ synth

int cmd_synth(const CommonFlags& flags, bool force) {
  const RunConfig c = build_config(flags);
  const fs::path out = require_out(c);
  const SyntheticDataset ds = synth_generate(c.synth, c.synth_frames, c.seed);
  write_synthetic_dataset(out, ds, force);
  write_effective_config(out, c);
  std::cout << "wrote " << ds.sequences.size() << " sequence(s) of " << c.synth_frames << " frames to " << out.string()
            << "\nscene_hash " << ds.scene_hash() << "\ndirectory_hash " << directory_hash(out) << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainOutputs {
  fs::path dir;
  std::string checkpoint_hash;
};

std::optional<ModelParams> load_init(const std::string& path, const char* what) {
  if (path.empty()) return std::nullopt;
  LoadedCheckpoint ck = load_checkpoint(path);
  std::cerr << "loaded " << what << " initialization from " << path << "\n";
  return std::move(ck.params);
}

TrainOutputs run_training(const RunConfig& c, const DatasetBundle& ds, const PairDataset& data, const fs::path& dir,
                          const ModelParams* global_src, const ModelParams* odom_src, bool verbose) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainedModel m = train_model(c, data, global_src, odom_src, verbose ? progress(c.train.iterations) : StepObserver{});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(dir);
  save_checkpoint(dir / "checkpoint.bin", m.params, run_metadata(c, ds.hash, data.mean()));
  std::ostringstream curve;
  curve << provenance(c);
  write_loss_curve_csv(curve, m.fit.curve);
  write_text(dir / "loss_curve.csv", curve.str());
  write_effective_config(dir, c);
  if (verbose) std::cerr << "trained " << c.train.iterations << " steps in " << secs << " s\n";
  return {dir, checkpoint_hash(dir / "checkpoint.bin")};
}

int cmd_train(const CommonFlags& flags, const std::string& dataset) {
  RunConfig c = build_config(flags);
  if (!dataset.empty()) c.dataset = dataset;
  if (c.dataset.empty()) throw ConfigError("a dataset directory is required (--dataset)");
  const fs::path out = require_out(c);

  // Everything that can fail on inputs happens before the output directory
  // is created.
  const DatasetBundle ds = load_dataset(c.dataset);
  const auto global_src = load_init(c.init_global, "global");
  const auto odom_src = load_init(c.init_odometry, "odometry");
  const PairDataset data(ds.sequences, c.preprocess);

  const TrainOutputs o = run_training(c, ds, data, out, global_src ? &*global_src : nullptr,
                                      odom_src ? &*odom_src : nullptr, true);
  std::cout << "checkpoint " << (out / "checkpoint.bin").string() << " hash " << o.checkpoint_hash << "\nconfig_hash "
            << c.hash() << "\n";
  return 0;
}

// ------------------------------------------------------------------- eval

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint, const std::string& dataset) {
  if (checkpoint.empty()) throw ConfigError("a checkpoint is required (--checkpoint)");
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const RunConfig trained = config_from_metadata(ck.metadata);
  RunConfig base = trained;
  base.presets.clear();
  RunConfig c = build_config(flags, base);
  c.checkpoint = checkpoint;
  if (!dataset.empty()) c.dataset = dataset;
  if (c.dataset.empty()) throw ConfigError("a dataset directory is required (--dataset)");
  const fs::path out = require_out(c);

  const std::string stored = ck.metadata.value("model_hash", std::string());
  if (stored != trained.model_hash() || c.model_hash() != stored) {
    throw ConfigError("config hash mismatch: checkpoint was trained with model config " + stored +
                      ", evaluation requests " + c.model_hash());
  }
  const DatasetBundle ds = load_dataset(c.dataset);
  if (ck.metadata.value("dataset_hash", std::string()) != ds.hash) {
    std::cerr << "warning: evaluating on a dataset other than the training dataset\n";
  }
  const PairDataset data(ds.sequences, c.preprocess, mean_from_metadata(ck.metadata));
  Warnings warnings;
  const MetricsReport report =
      evaluate_model(ck.params, data, c, ds.scene, checkpoint_hash(checkpoint), ds.hash, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
  emit_report(report, out);
  write_effective_config(out, c);

  const SceneMetrics& s = report.scenes.front();
  std::printf("%s: %zu frames, median %.4f m, %.3f deg\n", s.scene.c_str(), s.frames, s.median_translation,
              s.median_orientation);
  if (s.odometry) {
    std::printf("odometry: %.4f %%, %.4f deg/m over %zu windows\n", s.odometry->translation_percent,
                s.odometry->rotation_deg_per_m, s.odometry->windows);
  }
  return 0;
}

// -------------------------------------------------------------- gradcheck

int cmd_gradcheck(const CommonFlags& flags, std::size_t points, bool inject_faulty) {
  const RunConfig c = build_config(flags);
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream table;
  table << "op,points,max_rel_error,status\n";
  std::printf("%-34s %6s %14s  %s\n", "op", "points", "max_rel_error", "status");
  bool all_passed = true;
  for (const GradcheckCase& gc : gradcheck_registry(inject_faulty)) {
    const GradcheckRow row = run_gradcheck_case(gc, c.seed, points);
    all_passed = all_passed && row.passed;
    const char* status = row.passed ? "PASS" : "FAIL";
    std::printf("%-34s %6zu %14.3e  %s\n", row.name.c_str(), row.points, row.max_error, status);
    char err[32];
    std::snprintf(err, sizeof(err), "%.17g", row.max_error);
    table << row.name << ',' << row.points << ',' << err << ',' << status << '\n';
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("tolerance %.0e, %s in %.1f s\n", kGradcheckTolerance, all_passed ? "all passed" : "FAILED", secs);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "gradcheck.csv", provenance(c) + table.str());
    write_effective_config(c.out, c);
  }
  return all_passed ? 0 : kExitNumerical;
}

// ------------------------------------------------------------------ sweep

struct SweepPoint {
  std::string value;
  RunConfig config;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int cmd_sweep(const CommonFlags& flags, const std::string& name, const std::string& dataset) {
  RunConfig base = build_config(flags);
  if (!dataset.empty()) base.dataset = dataset;
  if (base.dataset.empty()) throw ConfigError("a dataset directory is required (--dataset)");
  const fs::path out = require_out(base);

  std::vector<SweepPoint> grid;
  auto point = [&](std::string value, const std::vector<std::pair<std::string, std::string>>& keys) {
    RunConfig c = base;
    for (const auto& [k, v] : keys) c.set(k, v);
    c.finalize();
    grid.push_back({std::move(value), std::move(c)});
  };
  const std::size_t last = base.network.num_stages();
  if (name == "fusion-stage") {
    for (std::size_t s = last - 2; s <= last; ++s) point(std::to_string(s), {{"net.fuse_prev_pose_at_stage", std::to_string(s)}});
  } else if (name == "sharing-depth") {
    for (std::size_t s = 2; s <= 4 && s < last; ++s) {
      point(std::to_string(s), {{"net.share_up_to_stage", std::to_string(s)}, {"train.task", "multitask"}});
    }
  } else if (name == "strategy") {
    for (const char* s : {"joint", "alternating"}) point(s, {{"train.strategy", s}, {"train.task", "multitask"}});
  } else if (name == "init") {
    point("st", {{"train.task", "global"}, {"train.init", "scratch"}});
    point("vo", {{"train.task", "odometry"}, {"train.init", "scratch"}});
    for (const char* m : {"scratch", "mt-gloc", "mt-vo", "mt-dual"}) {
      point(m, {{"train.task", "multitask"}, {"train.init", m}});
    }
  } else {
    throw ConfigError("unknown sweep '" + name + "' (expected fusion-stage|sharing-depth|strategy|init)");
  }

  const DatasetBundle ds = load_dataset(base.dataset);
  const PairDataset data(ds.sequences, base.preprocess);
  fs::create_directories(out);
  write_effective_config(out, base);

  std::ostringstream csv;
  csv << provenance(base);
  csv << "sweep,value,task,median_translation_m,median_orientation_deg,vo_translation_percent,vo_rotation_deg_per_m,"
         "config_hash,seed,dataset_hash\n";
  std::optional<ModelParams> st_model;
  std::optional<ModelParams> vo_model;
  std::vector<std::pair<std::string, double>> medians;
  for (SweepPoint& p : grid) {
    const fs::path dir = out / (name + "-" + p.value);
    std::cerr << "== " << name << " = " << p.value << "\n";
    TrainedModel m = train_model(p.config, data, st_model ? &*st_model : nullptr, vo_model ? &*vo_model : nullptr,
                                 progress(p.config.train.iterations));
    fs::create_directories(dir);
    save_checkpoint(dir / "checkpoint.bin", m.params, run_metadata(p.config, ds.hash, data.mean()));
    std::ostringstream curve;
    curve << provenance(p.config);
    write_loss_curve_csv(curve, m.fit.curve);
    write_text(dir / "loss_curve.csv", curve.str());
    write_effective_config(dir, p.config);

    RunConfig ec = p.config;
    ec.eval.odometry = p.config.train.task != Task::Global;
    const MetricsReport report =
        evaluate_model(m.params, data, ec, ds.scene, checkpoint_hash(dir / "checkpoint.bin"), ds.hash);
    emit_report(report, dir);
    const SceneMetrics& s = report.scenes.front();
    const bool vo = s.odometry.has_value();
    csv << name << ',' << p.value << ',' << to_string(p.config.train.task) << ',' << fmt(s.median_translation) << ','
        << fmt(s.median_orientation) << ',' << (vo ? fmt(s.odometry->translation_percent) : "") << ','
        << (vo ? fmt(s.odometry->rotation_deg_per_m) : "") << ',' << p.config.hash() << ',' << p.config.seed << ','
        << ds.hash << '\n';
    std::printf("%s=%s: median %.4f m, %.3f deg\n", name.c_str(), p.value.c_str(), s.median_translation,
                s.median_orientation);
    medians.emplace_back(p.value, s.median_translation);
    if (p.value == "st") st_model = std::move(m.params);
    if (p.value == "vo") vo_model = std::move(m.params);
  }
  write_text(out / ("sweep_" + name + ".csv"), csv.str());
  if (name == "strategy" && medians.size() == 2 && medians[0].second > 0.0) {
    std::printf("alternating vs joint: %.2f %% lower median translation error\n",
                100.0 * (medians[0].second - medians[1].second) / medians[0].second);
  }
  std::cout << "wrote " << (out / ("sweep_" + name + ".csv")).string() << "\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Desk-scale visual localization and odometry network"};
  app.set_version_flag("--version", std::string(kLibraryVersion));
  app.require_subcommand(1);

  CommonFlags flags;
  std::string dataset;
  std::string checkpoint;
  bool force = false;
  bool inject_faulty = false;
  std::size_t points = 20;
  std::string sweep_name;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, flags);
  synth->add_flag("--force", force, "overwrite an existing dataset");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, flags);
  train->add_option("--dataset", dataset, "dataset directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, flags);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--dataset", dataset, "dataset directory");

  auto* grad = app.add_subcommand("gradcheck", "check every analytic gradient against finite differences");
  add_common(grad, flags);
  grad->add_option("--points", points, "random points per op")->check(CLI::PositiveNumber);
  grad->add_flag("--inject-faulty", inject_faulty, "append an op with a broken gradient (negative control)");

  auto* sweep = app.add_subcommand("sweep", "run a named ablation grid");
  add_common(sweep, flags);
  sweep->add_option("name", sweep_name, "fusion-stage | sharing-depth | strategy | init")->required();
  sweep->add_option("--dataset", dataset, "dataset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (synth->parsed()) return cmd_synth(flags, force);
  if (train->parsed()) return cmd_train(flags, dataset);
  if (eval->parsed()) return cmd_eval(flags, checkpoint, dataset);
  if (grad->parsed()) return cmd_gradcheck(flags, points, inject_faulty);
  return cmd_sweep(flags, sweep_name, dataset);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const GeometryError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
