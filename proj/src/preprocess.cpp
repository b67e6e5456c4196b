#include <algorithm>
#include <cmath>
#include <numeric>

#include "vloc/data.hpp"
#include "vloc/error.hpp"
#include "vloc/hash.hpp"

namespace vloc {

using nlohmann::json;

void PreprocessConfig::validate() const {
  if (crop == 0) throw ConfigError("preprocess: crop must be positive");
  if (rescale_short_side != 0 && crop > rescale_short_side) {
    throw ConfigError("preprocess: crop " + std::to_string(crop) + " exceeds rescaled short side " +
                      std::to_string(rescale_short_side));
  }
}

json PreprocessConfig::to_json() const { return {{"rescale_short_side", rescale_short_side}, {"crop", crop}}; }

PreprocessConfig PreprocessConfig::from_json(const json& j) {
  PreprocessConfig c;
  try {
    c.rescale_short_side = j.value("rescale_short_side", c.rescale_short_side);
    c.crop = j.value("crop", c.crop);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("preprocess config: ") + e.what());
  }
  c.validate();
  return c;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw DataError("resize: empty target size");
  if (image.height == 0 || image.width == 0) throw DataError("resize: empty image");
  if (height == image.height && width == image.width) return image;
  Image out(image.channels, height, width);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
        const double bottom = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

Image rescale_short_side(const Image& image, std::size_t short_side) {
  if (short_side == 0) return image;
  const std::size_t h = image.height;
  const std::size_t w = image.width;
  if (h == 0 || w == 0) throw DataError("rescale: empty image");
  // Integer round-half-up of long * short_side / short.
  if (h <= w) {
    const std::size_t nw = (2 * w * short_side + h) / (2 * h);
    return resize_bilinear(image, short_side, nw);
  }
  const std::size_t nh = (2 * h * short_side + w) / (2 * w);
  return resize_bilinear(image, nh, short_side);
}

Image mean_image(std::span<const Image> images) {
  if (images.empty()) throw DataError("mean image: no images");
  Image mean(images[0].channels, images[0].height, images[0].width);
  for (const Image& img : images) {
    if (img.channels != mean.channels || img.height != mean.height || img.width != mean.width) {
      throw DataError("mean image: images differ in size");
    }
    for (std::size_t i = 0; i < img.pixels.size(); ++i) mean.pixels[i] += img.pixels[i];
  }
  for (double& v : mean.pixels) v /= static_cast<double>(images.size());
  return mean;
}

Image subtract(const Image& image, const Image& mean) {
  if (image.channels != mean.channels || image.height != mean.height || image.width != mean.width) {
    throw DataError("mean subtraction: mean image is " + std::to_string(mean.height) + "x" + std::to_string(mean.width) +
                    ", image is " + std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] -= mean.pixels[i];
  return out;
}

Image crop(const Image& image, std::size_t size, CropMode mode, std::mt19937_64* rng) {
  if (size > image.height || size > image.width) {
    throw DataError("crop " + std::to_string(size) + " exceeds image " + std::to_string(image.height) + "x" +
                    std::to_string(image.width));
  }
  std::size_t oy = (image.height - size) / 2;
  std::size_t ox = (image.width - size) / 2;
  if (mode == CropMode::Random) {
    if (!rng) throw Error("random crop requires an rng");
    oy = std::uniform_int_distribution<std::size_t>(0, image.height - size)(*rng);
    ox = std::uniform_int_distribution<std::size_t>(0, image.width - size)(*rng);
  }
  Image out(image.channels, size, size);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) out.at(c, y, x) = image.at(c, oy + y, ox + x);
    }
  }
  return out;
}

Image preprocess(const Image& image, const PreprocessConfig& config, const Image& mean, CropMode mode,
                 std::mt19937_64* rng) {
  return crop(subtract(rescale_short_side(image, config.rescale_short_side), mean), config.crop, mode, rng);
}

// ------------------------------------------------------------------ pairs

std::vector<FramePair> make_pairs(const Sequence& sequence, std::size_t sequence_index) {
  std::vector<FramePair> out;
  for (std::size_t k = 1; k < sequence.frames.size(); ++k) {
    FramePair p;
    p.sequence = sequence_index;
    p.current = k;
    p.previous = k - 1;
    p.pose_t = sequence.frames[k].pose;
    p.pose_prev = sequence.frames[k - 1].pose;
    p.rel_gt = relative_motion(p.pose_t, p.pose_prev);
    out.push_back(p);
  }
  return out;
}

std::vector<FramePair> make_pairs(std::span<const Sequence> sequences) {
  std::vector<FramePair> out;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto more = make_pairs(sequences[s], s);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

Tensor stack_images(std::span<const Image> images) {
  if (images.empty()) throw DataError("stack_images: empty batch");
  const Image& first = images[0];
  std::vector<double> values;
  values.reserve(images.size() * first.pixels.size());
  for (const Image& img : images) {
    if (img.channels != first.channels || img.height != first.height || img.width != first.width) {
      throw DataError("stack_images: images differ in size");
    }
    values.insert(values.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor({images.size(), first.channels, first.height, first.width}, std::move(values));
}

namespace {

Image training_mean(const std::vector<Sequence>& sequences, const PreprocessConfig& config) {
  std::vector<Image> rescaled;
  for (const Sequence& s : sequences) {
    if (s.split != Split::Train) continue;
    for (const Image& img : s.images) rescaled.push_back(rescale_short_side(img, config.rescale_short_side));
  }
  if (rescaled.empty()) throw DataError("no training images to compute the scene mean from");
  return mean_image(rescaled);
}

Tensor pose_rows(const std::vector<Pose>& poses, bool translation) {
  std::vector<double> v;
  for (const Pose& p : poses) {
    if (translation) {
      v.insert(v.end(), p.x.begin(), p.x.end());
    } else {
      v.insert(v.end(), {p.q.w, p.q.x, p.q.y, p.q.z});
    }
  }
  return Tensor({poses.size(), translation ? std::size_t{3} : std::size_t{4}}, std::move(v));
}

PoseBatch pose_batch(const std::vector<Pose>& poses) { return {pose_rows(poses, true), pose_rows(poses, false)}; }

}  // namespace

PairDataset::PairDataset(std::vector<Sequence> sequences, PreprocessConfig config)
    : sequences_(std::move(sequences)), config_(config) {
  config_.validate();
  mean_ = training_mean(sequences_, config_);
  prepare();
}

PairDataset::PairDataset(std::vector<Sequence> sequences, PreprocessConfig config, Image mean)
    : sequences_(std::move(sequences)), config_(config), mean_(std::move(mean)) {
  config_.validate();
  prepare();
}

void PairDataset::prepare() {
  prepared_.clear();
  for (const Sequence& s : sequences_) {
    if (s.images.size() != s.frames.size()) throw DataError("sequence " + s.id + " has no loaded images");
    std::vector<Image> imgs;
    imgs.reserve(s.images.size());
    for (const Image& img : s.images) {
      Image r = subtract(rescale_short_side(img, config_.rescale_short_side), mean_);
      if (r.height < config_.crop || r.width < config_.crop) {
        throw DataError("image of " + s.id + " is smaller than the crop after rescaling");
      }
      imgs.push_back(std::move(r));
    }
    prepared_.push_back(std::move(imgs));
  }
}

std::vector<FramePair> PairDataset::pairs(Split split) const {
  std::vector<FramePair> out;
  for (std::size_t s = 0; s < sequences_.size(); ++s) {
    if (sequences_[s].split != split) continue;
    const auto more = make_pairs(sequences_[s], s);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

Image PairDataset::input(std::size_t sequence, std::size_t frame, CropMode mode, std::mt19937_64* rng) const {
  return crop(prepared_.at(sequence).at(frame), config_.crop, mode, rng);
}

TrainingBatch PairDataset::batch(std::span<const FramePair> pairs, CropMode mode, std::mt19937_64* rng) const {
  if (pairs.empty()) throw DataError("empty batch");
  std::vector<Image> cur;
  std::vector<Image> prev;
  std::vector<Pose> pose_t;
  std::vector<Pose> pose_prev;
  std::vector<double> rel_x;
  std::vector<double> rel_q;
  for (const FramePair& p : pairs) {
    if (p.sequence >= sequences_.size()) throw DataError("pair refers to an unknown sequence");
    const Sequence& seq = sequences_[p.sequence];
    if (p.current >= seq.frames.size() || p.previous + 1 != p.current) {
      throw DataError("non-consecutive pair (" + std::to_string(p.previous) + ", " + std::to_string(p.current) +
                      ") in " + seq.id);
    }
    const Image& a = prepared_[p.sequence][p.current];
    const Image& b = prepared_[p.sequence][p.previous];
    if (mode == CropMode::Random) {
      // Draw one offset and apply it to both frames.
      std::mt19937_64 local(splitmix64((*rng)()));
      std::mt19937_64 twin = local;
      cur.push_back(crop(a, config_.crop, mode, &local));
      prev.push_back(crop(b, config_.crop, mode, &twin));
    } else {
      cur.push_back(crop(a, config_.crop, mode, nullptr));
      prev.push_back(crop(b, config_.crop, mode, nullptr));
    }
    pose_t.push_back(p.pose_t);
    pose_prev.push_back(p.pose_prev);
    rel_x.insert(rel_x.end(), p.rel_gt.x_rel.begin(), p.rel_gt.x_rel.end());
    rel_q.insert(rel_q.end(), {p.rel_gt.q_rel.w, p.rel_gt.q_rel.x, p.rel_gt.q_rel.y, p.rel_gt.q_rel.z});
  }
  TrainingBatch b;
  b.images_t = stack_images(cur);
  b.images_prev = stack_images(prev);
  b.pose_t = pose_batch(pose_t);
  b.pose_prev = pose_batch(pose_prev);
  b.rel_gt = {Tensor({pairs.size(), 3}, std::move(rel_x)), Tensor({pairs.size(), 4}, std::move(rel_q))};
  return b;
}

// ---------------------------------------------------------------- sampler

PairSampler::PairSampler(std::vector<FramePair> pairs, std::size_t batch_size)
    : pairs_(std::move(pairs)), batch_size_(batch_size) {
  if (pairs_.empty()) throw DataError("sampler: no training pairs");
  if (batch_size_ == 0) throw ConfigError("sampler: batch_size must be positive");
}

std::vector<FramePair> PairSampler::batch(std::size_t step, std::uint64_t seed) const {
  const std::size_t n = pairs_.size();
  std::vector<FramePair> out;
  out.reserve(batch_size_);
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < batch_size_; ++j) {
    const std::size_t position = step * batch_size_ + j;
    const std::size_t epoch = position / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(splitmix64(seed ^ splitmix64(epoch + 1)));
      // Fisher-Yates.
      for (std::size_t i = n; i > 1; --i) {
        const std::size_t k = static_cast<std::size_t>(rng() % i);
        std::swap(perm[i - 1], perm[k]);
      }
      cached_epoch = epoch;
    }
    out.push_back(pairs_[perm[position % n]]);
  }
  return out;
}

}  // namespace vloc
