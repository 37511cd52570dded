#include "zen/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace zen {

void FrameManifest::validate() const {
  std::set<std::pair<std::string, double>> seen;
  std::map<std::string, double> last_ts;
  for (const auto& r : records) {
    if (r.timestamp < 0.0)
      throw std::invalid_argument("manifest: negative timestamp in video " + r.video_id);
    if (!seen.insert({r.video_id, r.timestamp}).second)
      throw std::invalid_argument("manifest: duplicate (video,timestamp) " +
                                  r.video_id + "," + std::to_string(r.timestamp));
    auto it = last_ts.find(r.video_id);
    if (it != last_ts.end() && r.timestamp < it->second)
      throw std::invalid_argument("manifest: timestamps not sorted in video " +
                                  r.video_id);
    last_ts[r.video_id] = r.timestamp;
  }
}

std::vector<std::string> FrameManifest::video_ids() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : records)
    if (seen.insert(r.video_id).second) out.push_back(r.video_id);
  return out;
}

void save_manifest(const std::string& path, const FrameManifest& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "video_id,timestamp,frame_path,label\n";
  f.precision(17);
  for (const auto& r : m.records) {
    f << r.video_id << "," << r.timestamp << "," << r.frame_path << ",";
    if (r.label) f << *r.label;
    f << "\n";
  }
}

FrameManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("manifest: empty file " + path);
  if (line.rfind("video_id,timestamp,frame_path,label", 0) != 0)
    throw std::runtime_error("manifest: bad header in " + path);
  FrameManifest m;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    FrameRecord r;
    std::string ts, label;
    if (!std::getline(ss, r.video_id, ',') || !std::getline(ss, ts, ','))
      throw std::runtime_error("manifest: malformed line " + std::to_string(lineno));
    std::getline(ss, r.frame_path, ',');
    std::getline(ss, label, ',');
    r.timestamp = std::stod(ts);
    if (!label.empty()) r.label = std::stoi(label);
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

FrameManifest sample_fps(const FrameManifest& manifest, double fps) {
  if (fps <= 0.0) throw std::invalid_argument("sample_fps: fps must be positive");
  FrameManifest out;
  std::map<std::string, long long> last_bucket;
  for (const auto& r : manifest.records) {
    long long bucket = (long long)std::floor(r.timestamp * fps);
    auto it = last_bucket.find(r.video_id);
    if (it == last_bucket.end() || bucket != it->second) {
      out.records.push_back(r);
      last_bucket[r.video_id] = bucket;
    }
  }
  return out;
}

FrameManifest filter_in_body(const FrameManifest& manifest) {
  FrameManifest out;
  for (const auto& r : manifest.records)
    if (r.in_body) out.records.push_back(r);
  return out;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::size_t n) {
  if (spec.recipe != "blobs")
    throw std::invalid_argument("generate_synthetic: unknown recipe " + spec.recipe);
  if (spec.classes == 0) throw std::invalid_argument("generate_synthetic: no classes");
  SyntheticDataset ds;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> noise(-0.1, 0.1);

  // fixed per-class base colors, well separated so a linear probe can learn them
  std::vector<std::vector<double>> base(spec.classes,
                                        std::vector<double>(spec.channels, 0.0));
  std::uniform_real_distribution<double> color(0.0, 1.0);
  for (auto& b : base)
    for (auto& c : b) c = color(rng);

  for (std::size_t i = 0; i < n; ++i) {
    int label = int(i % spec.classes);
    Array img = Array::zeros({spec.channels, spec.height, spec.width});
    // class-dependent blob center
    double cy = (0.25 + 0.5 * double(label) / double(spec.classes)) * double(spec.height);
    double cx = (0.75 - 0.5 * double(label) / double(spec.classes)) * double(spec.width);
    double r2 = double(spec.height) * double(spec.width) / 16.0;
    for (std::size_t ch = 0; ch < spec.channels; ++ch)
      for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x) {
          double dy = double(y) - cy, dx = double(x) - cx;
          double blob = std::exp(-(dy * dy + dx * dx) / r2);
          img.values[ch * spec.height * spec.width + y * spec.width + x] =
              base[label][ch] * (0.4 + 0.6 * blob) + noise(rng);
        }
    FrameRecord rec;
    rec.video_id = "v" + std::to_string(i / spec.frames_per_video);
    rec.timestamp = double(i % spec.frames_per_video);
    rec.frame_path = "synthetic://" + std::to_string(i);
    rec.label = label;
    ds.manifest.records.push_back(std::move(rec));
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

Array flip_horizontal(const Array& image) {
  if (image.shape.size() != 3)
    throw ShapeError("flip_horizontal: expected [c x H x W]");
  std::size_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  Array out = image;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.values[ch * h * w + y * w + x] =
            image.values[ch * h * w + y * w + (w - 1 - x)];
  return out;
}

Array flip_vertical(const Array& image) {
  if (image.shape.size() != 3)
    throw ShapeError("flip_vertical: expected [c x H x W]");
  std::size_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  Array out = image;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.values[ch * h * w + y * w + x] =
            image.values[ch * h * w + (h - 1 - y) * w + x];
  return out;
}

std::vector<Array> augment(const std::vector<Array>& images, AugmentFlags flags,
                           std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Array> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    Array cur = img;
    if (flags.horizontal_flip && unif(rng) < 0.5) cur = flip_horizontal(cur);
    if (flags.vertical_flip && unif(rng) < 0.5) cur = flip_vertical(cur);
    out.push_back(std::move(cur));
  }
  return out;
}

}  // namespace zen
