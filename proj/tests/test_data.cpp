#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <random>

#include "doctest.h"
#include "zen/data.hpp"
#include "zen/trainer.hpp"

using namespace zen;

namespace {

FrameManifest make_manifest(const std::vector<std::pair<std::string, double>>& rows) {
  FrameManifest m;
  for (const auto& [vid, ts] : rows) {
    FrameRecord r;
    r.video_id = vid;
    r.timestamp = ts;
    r.frame_path = vid + "/" + std::to_string(ts);
    m.records.push_back(r);
  }
  return m;
}

std::vector<double> timestamps(const FrameManifest& m) {
  std::vector<double> out;
  for (const auto& r : m.records) out.push_back(r.timestamp);
  return out;
}

}  // namespace

TEST_CASE("sample_fps keeps the earliest frame per one-second bucket") {
  FrameManifest m = make_manifest({{"a", 0.0}, {"a", 0.4}, {"a", 1.1}, {"a", 1.9}, {"a", 3.0}});
  FrameManifest s = sample_fps(m, 1.0);
  CHECK(timestamps(s) == std::vector<double>{0.0, 1.1, 3.0});
}

TEST_CASE("sample_fps on a dense 10 s clip keeps ten frames") {
  FrameManifest m;
  for (int i = 0; i < 100; ++i) {
    FrameRecord r;
    r.video_id = "v";
    r.timestamp = double(i) / 10.0;
    m.records.push_back(r);
  }
  FrameManifest s = sample_fps(m, 1.0);
  REQUIRE(s.records.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(s.records[std::size_t(i)].timestamp == double(i));
}

TEST_CASE("sample_fps leaves already-sparse streams unchanged") {
  FrameManifest m = make_manifest({{"a", 0.0}, {"a", 1.0}, {"a", 2.0}, {"b", 0.5}});
  FrameManifest s = sample_fps(m, 2.0);
  CHECK(s.records.size() == m.records.size());
  CHECK(timestamps(s) == timestamps(m));
}

TEST_CASE("sample_fps is idempotent") {
  FrameManifest m = make_manifest(
      {{"a", 0.0}, {"a", 0.3}, {"a", 0.9}, {"a", 2.2}, {"b", 0.0}, {"b", 0.1}});
  FrameManifest once = sample_fps(m, 1.0);
  FrameManifest twice = sample_fps(once, 1.0);
  CHECK(timestamps(twice) == timestamps(once));
}

TEST_CASE("sample_fps handles empty input and rejects bad rates") {
  CHECK(sample_fps(FrameManifest{}, 1.0).records.empty());
  CHECK_THROWS(sample_fps(FrameManifest{}, 0.0));
  CHECK_THROWS(sample_fps(FrameManifest{}, -1.0));
}

TEST_CASE("sample_fps buckets per video independently") {
  FrameManifest m = make_manifest({{"a", 0.0}, {"b", 0.0}, {"a", 0.5}, {"b", 0.5}});
  FrameManifest s = sample_fps(m, 1.0);
  REQUIRE(s.records.size() == 2);
  CHECK(s.records[0].video_id == "a");
  CHECK(s.records[1].video_id == "b");
}

TEST_CASE("manifest validation errors") {
  FrameManifest m = make_manifest({{"a", -1.0}});
  CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("negative"), std::invalid_argument);
  m = make_manifest({{"a", 1.0}, {"a", 1.0}});
  CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("duplicate"), std::invalid_argument);
  m = make_manifest({{"a", 2.0}, {"a", 1.0}});
  CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("sorted"), std::invalid_argument);
  m = make_manifest({{"a", 0.0}, {"b", 0.0}, {"a", 1.0}});  // interleaved videos ok
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("filter_in_body drops flagged frames") {
  FrameManifest m = make_manifest({{"a", 0.0}, {"a", 1.0}, {"a", 2.0}});
  m.records[1].in_body = false;
  FrameManifest f = filter_in_body(m);
  CHECK(timestamps(f) == std::vector<double>{0.0, 2.0});
}

TEST_CASE("manifest CSV round-trip preserves records") {
  FrameManifest m = make_manifest({{"a", 0.0}, {"a", 1.25}, {"b", 0.5}});
  m.records[0].label = 3;
  m.records[2].label = 0;
  std::string path = "/tmp/zen_test_manifest.csv";
  save_manifest(path, m);
  FrameManifest r = load_manifest(path);
  REQUIRE(r.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.records[i].video_id == m.records[i].video_id);
    CHECK(r.records[i].timestamp == m.records[i].timestamp);
    CHECK(r.records[i].frame_path == m.records[i].frame_path);
    CHECK(r.records[i].label == m.records[i].label);
  }
  std::remove(path.c_str());
}

TEST_CASE("synthetic generation: empty, shape, grouping") {
  SyntheticSpec spec;
  spec.seed = 1;
  CHECK(generate_synthetic(spec, 0).images.empty());

  spec.frames_per_video = 4;
  SyntheticDataset ds = generate_synthetic(spec, 10);
  REQUIRE(ds.images.size() == 10);
  CHECK(ds.images[0].shape == std::vector<std::size_t>{3, 32, 32});
  CHECK(ds.labels[0] == 0);
  CHECK(ds.labels[1] == 1);
  CHECK(ds.manifest.video_ids() == std::vector<std::string>{"v0", "v1", "v2"});
  CHECK_NOTHROW(ds.manifest.validate());
  CHECK_THROWS(generate_synthetic(SyntheticSpec{0, 3, 32, 32, 2, 10, "nope"}, 1));
}

TEST_CASE("synthetic generation is bit-deterministic in the spec") {
  SyntheticSpec spec;
  spec.seed = 9;
  spec.channels = 1;
  spec.height = 16;
  spec.width = 16;
  SyntheticDataset a = generate_synthetic(spec, 6);
  SyntheticDataset b = generate_synthetic(spec, 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(a.images[i].values == b.images[i].values);

  spec.seed = 10;
  SyntheticDataset c = generate_synthetic(spec, 6);
  CHECK(a.images[0].values != c.images[0].values);
}

TEST_CASE("synthetic classes are learnable by a frozen probe") {
  SyntheticSpec spec;
  spec.seed = 50;
  spec.channels = 1;
  spec.height = 16;
  spec.width = 16;
  spec.frames_per_video = 4;
  SyntheticDataset all = generate_synthetic(spec, 32);
  ProbeData train, test;
  for (std::size_t i = 0; i < 32; ++i) {
    ProbeData& dst = i < 24 ? train : test;
    dst.images.push_back(all.images[i]);
    dst.labels.push_back(all.labels[i]);
    dst.manifest.records.push_back(all.manifest.records[i]);
  }
  TrainConfig cfg;
  cfg.regime = TrainRegime::probe_frozen;
  cfg.epochs = 150;
  cfg.batch_size = 8;
  cfg.base_lr = 5e-2;
  cfg.seed = 2;
  ViTConfig enc = vit_preset("toy-grad-check");
  ProbeResult r = train_probe(cfg, enc, init_vit_params(enc, 7), train, test, 2);
  CHECK(r.report.at("test_accuracy") > 0.6);
}

TEST_CASE("flips are involutions and leave shape intact") {
  SyntheticSpec spec;
  spec.seed = 3;
  spec.height = 8;
  spec.width = 6;
  Array img = generate_synthetic(spec, 1).images[0];
  CHECK(flip_horizontal(flip_horizontal(img)).values == img.values);
  CHECK(flip_vertical(flip_vertical(img)).values == img.values);
  CHECK(flip_horizontal(img).shape == img.shape);
  // asymmetric image really changes under a flip
  CHECK(flip_horizontal(img).values != img.values);
  CHECK_THROWS_AS(flip_horizontal(Array::zeros({4, 4})), ShapeError);
}

TEST_CASE("flip_horizontal mirrors columns exactly") {
  Array img({1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  CHECK(flip_horizontal(img).values == std::vector<double>{4.0, 3.0, 2.0, 1.0});
  Array tall({1, 3, 1}, {1.0, 2.0, 3.0});
  CHECK(flip_vertical(tall).values == std::vector<double>{3.0, 2.0, 1.0});
}

TEST_CASE("augment with no flags is the identity and draws nothing") {
  SyntheticSpec spec;
  spec.seed = 4;
  spec.height = 8;
  spec.width = 8;
  auto images = generate_synthetic(spec, 3).images;
  std::mt19937_64 rng(123), fresh(123);
  auto out = augment(images, AugmentFlags{}, rng);
  REQUIRE(out.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out[i].values == images[i].values);
  CHECK(rng() == fresh());  // rng untouched
}

TEST_CASE("augment replays deterministically and each output is a flip variant") {
  SyntheticSpec spec;
  spec.seed = 5;
  spec.height = 8;
  spec.width = 8;
  auto images = generate_synthetic(spec, 20).images;
  AugmentFlags flags{true, true};
  std::mt19937_64 r1(7), r2(7);
  auto a = augment(images, flags, r1);
  auto b = augment(images, flags, r2);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    CHECK(a[i].values == b[i].values);
    // every output is one of the four flip combinations of its input
    bool match = a[i].values == images[i].values ||
                 a[i].values == flip_horizontal(images[i]).values ||
                 a[i].values == flip_vertical(images[i]).values ||
                 a[i].values == flip_vertical(flip_horizontal(images[i])).values;
    CHECK(match);
    if (a[i].values != images[i].values) ++changed;
  }
  CHECK(changed > 0);  // with 20 images, all-identity has probability 2^-40-ish
}
