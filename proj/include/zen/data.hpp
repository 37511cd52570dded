#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "zen/tensor.hpp"

namespace zen {

struct FrameRecord {
  std::string video_id;
  double timestamp = 0.0;  // seconds
  std::string frame_path;
  std::optional<int> label;
  bool in_body = true;  // filter hook for out-of-body / blank frames
};

struct FrameManifest {
  std::vector<FrameRecord> records;

  // (video_id, timestamp) unique, timestamps non-negative and sorted per video
  void validate() const;
  std::vector<std::string> video_ids() const;  // distinct, in first-seen order
};

// CSV with header video_id,timestamp,frame_path,label
void save_manifest(const std::string& path, const FrameManifest& m);
FrameManifest load_manifest(const std::string& path);

// Keeps, per video, the earliest frame in each 1/fps-second bucket.
FrameManifest sample_fps(const FrameManifest& manifest, double fps);

FrameManifest filter_in_body(const FrameManifest& manifest);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 2;
  std::size_t frames_per_video = 10;
  std::string recipe = "blobs";  // class-conditioned colored blobs + noise
};

struct SyntheticDataset {
  std::vector<Array> images;  // [c x H x W]
  std::vector<int> labels;
  FrameManifest manifest;
};

// Deterministic in spec: same spec + n gives bit-identical output.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::size_t n);

struct AugmentFlags {
  bool horizontal_flip = false;
  bool vertical_flip = false;
};

// Each enabled flip applied independently with probability 0.5 per image.
std::vector<Array> augment(const std::vector<Array>& images, AugmentFlags flags,
                           std::mt19937_64& rng);

Array flip_horizontal(const Array& image);
Array flip_vertical(const Array& image);

}  // namespace zen
