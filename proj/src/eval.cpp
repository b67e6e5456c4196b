#include "vloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vloc/error.hpp"
#include "vloc/version.hpp"

namespace vloc {

namespace fs = std::filesystem;
using nlohmann::json;

PoseErrors localization_errors(std::span<const Pose> predictions, std::span<const Pose> groundtruth,
                               std::span<const std::string> frame_ids) {
  if (predictions.size() != groundtruth.size()) {
    throw Error("localization_errors: " + std::to_string(predictions.size()) + " predictions vs " +
                std::to_string(groundtruth.size()) + " groundtruth poses");
  }
  if (!frame_ids.empty() && frame_ids.size() != predictions.size()) throw Error("localization_errors: frame id count mismatch");
  PoseErrors e;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    e.translation.push_back(translation_distance(predictions[i].x, groundtruth[i].x));
    e.orientation.push_back(angular_distance(predictions[i].q, groundtruth[i].q));
  }
  e.frame_ids.assign(frame_ids.begin(), frame_ids.end());
  return e;
}

double median(std::span<const double> values) {
  if (values.empty()) throw Error("median of an empty set");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + mid);
  return (lower + upper) / 2.0;
}

std::vector<double> cumulative_histogram(std::span<const double> errors, std::span<const double> thresholds) {
  if (thresholds.empty()) throw Error("cumulative_histogram: no thresholds");
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) throw Error("cumulative_histogram: thresholds must be strictly increasing");
  }
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  if (!sorted.empty() && sorted.back() > thresholds.back()) {
    throw Error("cumulative_histogram: last threshold is below the largest error");
  }
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    if (sorted.empty()) {
      out.push_back(1.0);
      continue;
    }
    const auto count = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back(static_cast<double>(count) / static_cast<double>(sorted.size()));
  }
  return out;
}

std::vector<double> default_thresholds(std::span<const double> errors, std::size_t count) {
  if (count == 0) throw Error("default_thresholds: count must be positive");
  const double top = errors.empty() ? 0.0 : *std::max_element(errors.begin(), errors.end());
  if (top <= 0.0) return {0.0};
  std::vector<double> t;
  for (std::size_t i = 1; i < count; ++i) t.push_back(top * static_cast<double>(i) / static_cast<double>(count));
  t.push_back(top);
  return t;
}

VoMetrics vo_metrics(std::span<const RelativeMotion> predicted_rel, std::span<const Pose> gt_poses,
                     const VoOptions& options, Warnings* warnings) {
  if (gt_poses.size() != predicted_rel.size() + 1) {
    throw Error("vo_metrics: expected " + std::to_string(gt_poses.size() - (gt_poses.empty() ? 0 : 1)) +
                " relative predictions, got " + std::to_string(predicted_rel.size()));
  }
  if (options.stride == 0) throw Error("vo_metrics: stride must be positive");
  const std::size_t n = predicted_rel.size();
  VoMetrics m;
  auto warn = [&](const std::string& msg) {
    if (warnings) {
      warnings->push_back(msg);
    } else {
      std::cerr << "warning: " << msg << '\n';
    }
  };

  std::vector<double> dist(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) dist[k + 1] = dist[k] + translation_distance(gt_poses[k + 1].x, gt_poses[k].x);

  double t_sum = 0.0;
  double r_sum = 0.0;
  auto score = [&](std::size_t i, std::size_t j) {
    const double length = dist[j] - dist[i];
    if (!(length > 0.0)) {
      ++m.skipped;
      warn("vo_metrics: zero-length window [" + std::to_string(i) + ", " + std::to_string(j) + "] skipped");
      return;
    }
    Pose p = gt_poses[i];
    for (std::size_t k = i; k < j; ++k) p = compose(p, predicted_rel[k]);
    t_sum += 100.0 * translation_distance(p.x, gt_poses[j].x) / length;
    r_sum += angular_distance(p.q, gt_poses[j].q) / length;
    ++m.windows;
  };

  if (options.per_pair) {
    for (std::size_t k = 0; k < n; k += options.stride) score(k, k + 1);
  } else {
    for (double fraction : options.window_fractions) {
      if (!(fraction > 0.0)) throw Error("vo_metrics: window fractions must be positive");
      const double window = fraction * dist[n];
      if (!(window > 0.0)) {
        ++m.skipped;
        warn("vo_metrics: zero-length window (path length 0) skipped");
        continue;
      }
      for (std::size_t i = 0; i < n; i += options.stride) {
        // First frame at least `window` meters further along the path.
        const auto it = std::lower_bound(dist.begin() + i + 1, dist.end(), dist[i] + window);
        if (it == dist.end()) break;
        score(i, static_cast<std::size_t>(it - dist.begin()));
      }
    }
  }
  if (m.windows > 0) {
    m.translation_percent = t_sum / static_cast<double>(m.windows);
    m.rotation_deg_per_m = r_sum / static_cast<double>(m.windows);
  }
  return m;
}

// ---------------------------------------------------------------- report

namespace {

json histogram_json(const Histogram& h) { return {{"thresholds", h.thresholds}, {"fractions", h.fractions}}; }

Histogram histogram_from_json(const json& j) {
  return {j.at("thresholds").get<std::vector<double>>(), j.at("fractions").get<std::vector<double>>()};
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

json MetricsReport::to_json() const {
  json scenes_json = json::array();
  for (const SceneMetrics& s : scenes) {
    json js = {{"scene", s.scene},
               {"frames", s.frames},
               {"median_translation_m", s.median_translation},
               {"median_orientation_deg", s.median_orientation},
               {"translation_histogram", histogram_json(s.translation_histogram)},
               {"orientation_histogram", histogram_json(s.orientation_histogram)}};
    if (s.odometry) {
      js["odometry"] = {{"translation_percent", s.odometry->translation_percent},
                        {"rotation_deg_per_m", s.odometry->rotation_deg_per_m},
                        {"windows", s.odometry->windows},
                        {"skipped", s.odometry->skipped}};
    }
    scenes_json.push_back(js);
  }
  return {{"schema_version", schema_version},
          {"config_hash", config_hash},
          {"seed", seed},
          {"checkpoint_hash", checkpoint_hash},
          {"dataset_hash", dataset_hash},
          {"first_frame_bootstrap", first_frame_bootstrap},
          {"vo_protocol", vo_protocol},
          {"vo_windows", vo_windows},
          {"scenes", scenes_json}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  try {
    r.schema_version = j.at("schema_version").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.checkpoint_hash = j.value("checkpoint_hash", std::string());
    r.dataset_hash = j.value("dataset_hash", std::string());
    r.first_frame_bootstrap = j.at("first_frame_bootstrap").get<bool>();
    r.vo_protocol = j.at("vo_protocol").get<std::string>();
    r.vo_windows = j.at("vo_windows").get<std::vector<double>>();
    for (const json& js : j.at("scenes")) {
      SceneMetrics s;
      s.scene = js.at("scene").get<std::string>();
      s.frames = js.at("frames").get<std::size_t>();
      s.median_translation = js.at("median_translation_m").get<double>();
      s.median_orientation = js.at("median_orientation_deg").get<double>();
      s.translation_histogram = histogram_from_json(js.at("translation_histogram"));
      s.orientation_histogram = histogram_from_json(js.at("orientation_histogram"));
      if (js.contains("odometry")) {
        const json& o = js.at("odometry");
        s.odometry = VoMetrics{o.at("translation_percent").get<double>(), o.at("rotation_deg_per_m").get<double>(),
                               o.at("windows").get<std::size_t>(), o.at("skipped").get<std::size_t>()};
      }
      r.scenes.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("metrics report: ") + e.what());
  }
  return r;
}

namespace {

void write_provenance(std::ostream& os, const MetricsReport& report) {
  os << "# schema_version=" << report.schema_version << " config_hash=" << report.config_hash
     << " seed=" << report.seed << "\n";
}

}  // namespace

void write_metrics_csv(std::ostream& os, const MetricsReport& report) {
  write_provenance(os, report);
  os << "scene,component,median,unit\n";
  for (const SceneMetrics& s : report.scenes) {
    os << s.scene << ",translation," << fmt17(s.median_translation) << ",m\n";
    os << s.scene << ",orientation," << fmt17(s.median_orientation) << ",deg\n";
  }
}

void write_histogram_csv(std::ostream& os, const Histogram& histogram) {
  os << "threshold,fraction\n";
  for (std::size_t i = 0; i < histogram.thresholds.size(); ++i) {
    os << fmt17(histogram.thresholds[i]) << ',' << fmt17(histogram.fractions[i]) << '\n';
  }
}

void emit_report(const MetricsReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "metrics.json", report.to_json().dump(2) + "\n");
  std::ostringstream csv;
  write_metrics_csv(csv, report);
  write_file(dir / "metrics.csv", csv.str());
  for (const SceneMetrics& s : report.scenes) {
    std::ostringstream ht;
    write_provenance(ht, report);
    write_histogram_csv(ht, s.translation_histogram);
    write_file(dir / ("histogram_" + s.scene + "_translation.csv"), ht.str());
    std::ostringstream ho;
    write_provenance(ho, report);
    write_histogram_csv(ho, s.orientation_histogram);
    write_file(dir / ("histogram_" + s.scene + "_orientation.csv"), ho.str());
  }
}

// ------------------------------------------------------------ inference

std::vector<Pose> predict_sequence(const ModelParams& params, const PairDataset& data, std::size_t sequence) {
  const Sequence& seq = data.sequences().at(sequence);
  std::vector<Pose> out;
  if (seq.size() < 2) return out;
  Pose prev = seq.frames[0].pose;
  const ForwardOptions fwd{false, nullptr};
  for (std::size_t k = 1; k < seq.size(); ++k) {
    const Image img = data.input(sequence, k, CropMode::Center, nullptr);
    const PoseBatch pred = forward_global(params, stack_images(std::span(&img, 1)), pose_tensor(std::span(&prev, 1)), fwd);
    prev = poses_from_batch(pred).front();
    out.push_back(prev);
  }
  return out;
}

std::vector<RelativeMotion> predict_odometry(const ModelParams& params, const PairDataset& data, std::size_t sequence) {
  const Sequence& seq = data.sequences().at(sequence);
  std::vector<RelativeMotion> out;
  constexpr std::size_t kChunk = 16;
  const ForwardOptions fwd{false, nullptr};
  for (std::size_t start = 1; start < seq.size(); start += kChunk) {
    const std::size_t end = std::min(seq.size(), start + kChunk);
    std::vector<Image> cur;
    std::vector<Image> prev;
    for (std::size_t k = start; k < end; ++k) {
      cur.push_back(data.input(sequence, k, CropMode::Center, nullptr));
      prev.push_back(data.input(sequence, k - 1, CropMode::Center, nullptr));
    }
    const auto motions = motions_from_batch(forward_odometry(params, stack_images(cur), stack_images(prev), fwd));
    out.insert(out.end(), motions.begin(), motions.end());
  }
  return out;
}

SceneMetrics evaluate_scene(const ModelParams& params, const PairDataset& data, const std::string& scene,
                            const EvaluationOptions& options, Warnings* warnings) {
  std::vector<double> t_err;
  std::vector<double> r_err;
  double vo_t = 0.0;
  double vo_r = 0.0;
  VoMetrics vo_total;
  for (std::size_t s = 0; s < data.sequences().size(); ++s) {
    const Sequence& seq = data.sequences()[s];
    if (seq.split != options.split || seq.size() < 2) continue;
    const std::vector<Pose> pred = predict_sequence(params, data, s);
    std::vector<Pose> gt;
    for (std::size_t k = 1; k < seq.size(); ++k) gt.push_back(seq.frames[k].pose);
    const PoseErrors e = localization_errors(pred, gt);
    t_err.insert(t_err.end(), e.translation.begin(), e.translation.end());
    r_err.insert(r_err.end(), e.orientation.begin(), e.orientation.end());
    if (options.odometry) {
      std::vector<Pose> all;
      for (const FrameRecord& f : seq.frames) all.push_back(f.pose);
      const VoMetrics m = vo_metrics(predict_odometry(params, data, s), all, options.vo, warnings);
      vo_t += m.translation_percent * static_cast<double>(m.windows);
      vo_r += m.rotation_deg_per_m * static_cast<double>(m.windows);
      vo_total.windows += m.windows;
      vo_total.skipped += m.skipped;
    }
  }
  if (t_err.empty()) throw DataError("no " + std::string(to_string(options.split)) + " frames to evaluate");
  SceneMetrics out;
  out.scene = scene;
  out.frames = t_err.size();
  out.median_translation = median(t_err);
  out.median_orientation = median(r_err);
  out.translation_histogram.thresholds = default_thresholds(t_err, options.histogram_bins);
  out.translation_histogram.fractions = cumulative_histogram(t_err, out.translation_histogram.thresholds);
  out.orientation_histogram.thresholds = default_thresholds(r_err, options.histogram_bins);
  out.orientation_histogram.fractions = cumulative_histogram(r_err, out.orientation_histogram.thresholds);
  if (options.odometry) {
    if (vo_total.windows > 0) {
      vo_total.translation_percent = vo_t / static_cast<double>(vo_total.windows);
      vo_total.rotation_deg_per_m = vo_r / static_cast<double>(vo_total.windows);
    }
    out.odometry = vo_total;
  }
  return out;
}

}  // namespace vloc
