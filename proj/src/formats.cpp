#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "vloc/data.hpp"
#include "vloc/error.hpp"

namespace vloc {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool parse_double(std::string_view token, double& out) {
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

void warn(Warnings* warnings, std::string message) {
  if (warnings) {
    warnings->push_back(std::move(message));
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string frame_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame-%06zu", index);
  return buf;
}

std::string seq_dir(std::size_t number) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq-%02zu", number);
  return buf;
}

// Sequence numbers listed in a split file. Accepts "sequence3", "seq-03" or "3".
std::vector<std::size_t> read_split(const fs::path& path) {
  std::vector<std::size_t> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    std::string_view t = tokens[0];
    const std::size_t k = t.find_first_of("0123456789");
    std::size_t n = 0;
    const char* end = t.data() + t.size();
    if (k == std::string_view::npos || std::from_chars(t.data() + k, end, n).ptr != end) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad sequence entry '" + std::string(t) + "'");
    }
    out.push_back(n);
  }
  return out;
}

}  // namespace

Mat4 read_pose_file(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing pose file " + path.string());
  const std::string text = read_text(path);
  const auto tokens = split_ws(text);
  if (tokens.size() != 16) {
    throw DataError(path.string() + ": expected 16 values, found " + std::to_string(tokens.size()));
  }
  Mat4 m{};
  for (std::size_t i = 0; i < 16; ++i) {
    if (!parse_double(tokens[i], m[i / 4][i % 4])) {
      throw DataError(path.string() + ": malformed number '" + std::string(tokens[i]) + "'");
    }
  }
  return m;
}

void write_pose_file(const fs::path& path, const Pose& pose) {
  const Mat4 m = pose_to_matrix(pose);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& row : m) out << fmt17(row[0]) << ' ' << fmt17(row[1]) << ' ' << fmt17(row[2]) << ' ' << fmt17(row[3]) << '\n';
}

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<Sequence> load_sevenscenes_layout(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  std::map<std::size_t, Split> splits;
  for (std::size_t n : read_split(root / "TrainSplit.txt")) splits[n] = Split::Train;
  for (std::size_t n : read_split(root / "TestSplit.txt")) {
    if (splits.count(n)) throw DataError(root.string() + ": sequence " + std::to_string(n) + " is in both splits");
    splits[n] = Split::Test;
  }
  if (splits.empty()) throw DataError(root.string() + ": no TrainSplit.txt/TestSplit.txt entries");

  std::vector<Sequence> sequences;
  for (const auto& [number, split] : splits) {
    const fs::path dir = root / seq_dir(number);
    if (!fs::is_directory(dir)) throw DataError("missing sequence directory " + dir.string());
    std::vector<std::pair<std::size_t, fs::path>> frames;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      constexpr std::string_view prefix = "frame-";
      constexpr std::string_view suffix = ".pose.txt";
      if (name.size() <= prefix.size() + suffix.size() || !name.starts_with(prefix) || !name.ends_with(suffix)) continue;
      const std::string_view digits(name.data() + prefix.size(), name.size() - prefix.size() - suffix.size());
      std::size_t index = 0;
      if (std::from_chars(digits.data(), digits.data() + digits.size(), index).ptr != digits.data() + digits.size()) {
        throw DataError("bad frame file name " + entry.path().string());
      }
      frames.emplace_back(index, entry.path());
    }
    std::sort(frames.begin(), frames.end());
    Sequence seq;
    seq.id = seq_dir(number);
    seq.split = split;
    for (const auto& [index, pose_path] : frames) {
      FrameRecord rec;
      rec.sequence_id = seq.id;
      rec.frame_index = index;
      try {
        rec.pose = matrix_to_pose(read_pose_file(pose_path));
      } catch (const GeometryError& e) {
        throw DataError(pose_path.string() + ": " + e.what());
      }
      rec.pose.q = quat_canonical(rec.pose.q);
      const fs::path image = dir / (frame_stem(index) + ".color.png");
      if (fs::exists(image)) rec.image_path = image.string();
      seq.frames.push_back(std::move(rec));
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

void write_sevenscenes_layout(const fs::path& root, const std::vector<Sequence>& sequences) {
  fs::create_directories(root);
  std::ofstream train(root / "TrainSplit.txt");
  std::ofstream test(root / "TestSplit.txt");
  if (!train || !test) throw DataError("cannot write split files under " + root.string());
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const Sequence& seq = sequences[s];
    const std::size_t number = s + 1;
    (seq.split == Split::Train ? train : test) << "sequence" << number << '\n';
    const fs::path dir = root / seq_dir(number);
    fs::create_directories(dir);
    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
      const FrameRecord& f = seq.frames[k];
      write_pose_file(dir / (frame_stem(f.frame_index) + ".pose.txt"), f.pose);
      if (k < seq.images.size()) write_png(dir / (frame_stem(f.frame_index) + ".color.png"), seq.images[k]);
    }
  }
}

void load_images(Sequence& sequence) {
  sequence.images.clear();
  sequence.images.reserve(sequence.frames.size());
  for (const FrameRecord& f : sequence.frames) {
    if (f.image_path.empty()) throw DataError("frame " + std::to_string(f.frame_index) + " of " + sequence.id + " has no image");
    sequence.images.push_back(read_png(f.image_path));
  }
}

std::vector<TumRecord> parse_tum_format(std::string_view text, std::string_view origin, Warnings* warnings) {
  std::vector<TumRecord> records;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = std::string(origin) + ":" + std::to_string(lineno);
    if (tokens.size() != 8) throw DataError(where + ": expected 8 fields, found " + std::to_string(tokens.size()));
    double v[8];
    for (std::size_t i = 0; i < 8; ++i) {
      if (!parse_double(tokens[i], v[i])) throw DataError(where + ": malformed number '" + std::string(tokens[i]) + "'");
    }
    TumRecord r;
    r.timestamp = v[0];
    r.pose.x = {v[1], v[2], v[3]};
    try {
      const Quat q{v[7], v[4], v[5], v[6]};
      // Already-unit values are kept bit-exact so that write/read round trips.
      const bool unit = std::abs(quat_norm(q) - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon();
      r.pose.q = quat_canonical(unit ? q : quat_normalize(q));
    } catch (const GeometryError& e) {
      throw DataError(where + ": " + e.what());
    }
    records.push_back(r);
    if (end == text.size()) break;
  }
  const auto by_time = [](const TumRecord& a, const TumRecord& b) { return a.timestamp < b.timestamp; };
  if (!std::is_sorted(records.begin(), records.end(), by_time)) {
    warn(warnings, std::string(origin) + ": timestamps are not monotone; records were sorted");
    std::stable_sort(records.begin(), records.end(), by_time);
  }
  return records;
}

std::vector<TumRecord> load_tum_format(const fs::path& path, Warnings* warnings) {
  const std::string text = read_text(path);
  return parse_tum_format(text, path.string(), warnings);
}

void write_tum_format(const fs::path& path, std::span<const TumRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const TumRecord& r : records) {
    const Pose& p = r.pose;
    out << fmt17(r.timestamp) << ' ' << fmt17(p.x[0]) << ' ' << fmt17(p.x[1]) << ' ' << fmt17(p.x[2]) << ' '
        << fmt17(p.q.x) << ' ' << fmt17(p.q.y) << ' ' << fmt17(p.q.z) << ' ' << fmt17(p.q.w) << '\n';
  }
}

}  // namespace vloc
