#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "zen/data.hpp"
#include "zen/trainer.hpp"

using namespace zen;

namespace {

DistillAssembly small_assembly(std::uint64_t seed, double p_drop = 0.25) {
  ViTConfig student = vit_preset("toy-grad-check");
  std::vector<TeacherSpec> teachers;
  teachers.push_back(make_vision_teacher("va", student, seed + 1));
  VlTeacherConfig vc;
  vc.image_size = student.image_size;
  vc.patch_size = student.patch_size;
  vc.channels = student.channels;
  vc.hidden_dim = 12;
  vc.output_dim = 8;
  teachers.push_back(make_vl_teacher("vb", vc, seed + 2));
  DistillConfig d;
  d.p_drop = p_drop;
  d.adaptor_mid = 8;
  return build_assembly(student, std::move(teachers), d, seed);
}

std::vector<Array> small_images(std::size_t n) {
  SyntheticSpec spec;
  spec.seed = 77;
  spec.channels = 1;
  spec.height = 16;
  spec.width = 16;
  return generate_synthetic(spec, n).images;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/zen_test_") + name;
}

}  // namespace

TEST_CASE("adamw: zero gradient with weight decay shrinks exactly") {
  std::map<std::string, Array> params{{"w", Array({2}, {1.0, -2.0})}};
  OptimState st;
  st.cfg.lr = 0.1;
  st.cfg.weight_decay = 0.01;
  adamw_step(params, {{"w", {0.0, 0.0}}}, st);
  CHECK(params["w"].values[0] == doctest::Approx(1.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
  CHECK(params["w"].values[1] == doctest::Approx(-2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
}

TEST_CASE("adamw: zero gradient, zero decay leaves parameters unchanged") {
  std::map<std::string, Array> params{{"w", Array({2}, {3.0, -4.0})}};
  OptimState st;
  st.cfg.lr = 0.1;
  adamw_step(params, {{"w", {0.0, 0.0}}}, st);
  CHECK(params["w"].values == std::vector<double>{3.0, -4.0});
}

TEST_CASE("adamw single-step scalar recurrence oracle") {
  std::map<std::string, Array> params{{"w", Array({1}, {0.5})}};
  OptimState st;
  st.cfg.lr = 0.1;
  adamw_step(params, {{"w", {1.0}}}, st);
  // m=0.1, v=0.001; bias correction t=1: mhat=1, vhat=1
  double expect = 0.5 - 0.1 * 1.0 / (std::sqrt(1.0) + 1e-8);
  CHECK(params["w"].values[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(st.t == 1);
}

TEST_CASE("adamw two-step recurrence oracle") {
  std::map<std::string, Array> params{{"w", Array({1}, {0.5})}};
  OptimState st;
  st.cfg.lr = 0.1;
  double w = 0.5, m = 0.0, v = 0.0;
  std::vector<double> grads = {1.0, -0.3};
  for (int t = 1; t <= 2; ++t) {
    double g = grads[std::size_t(t - 1)];
    adamw_step(params, {{"w", {g}}}, st);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    double mhat = m / (1.0 - std::pow(0.9, t));
    double vhat = v / (1.0 - std::pow(0.999, t));
    w -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(params["w"].values[0] == doctest::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("adamw halts on non-finite gradients naming the step") {
  std::map<std::string, Array> params{{"w", Array({1}, {0.5})}};
  OptimState st;
  CHECK_THROWS_WITH_AS(
      adamw_step(params, {{"w", {std::numeric_limits<double>::quiet_NaN()}}}, st),
      doctest::Contains("step 1"), std::runtime_error);
}

TEST_CASE("lr schedule anchor points") {
  CHECK(lr_at(10, 100, 10, 1e-3, 1e-5) == 1e-3);
  CHECK(lr_at(100, 100, 10, 1e-3, 1e-5) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_at(55, 100, 10, 1e-3, 1e-5) ==
        doctest::Approx((1e-3 + 1e-5) / 2.0).epsilon(1e-12));
  CHECK(lr_at(5, 100, 10, 1e-3, 1e-5) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_at(0, 100, 10, 1e-3, 1e-5) == 0.0);
  CHECK_THROWS(lr_at(101, 100, 10, 1e-3, 1e-5));
}

TEST_CASE("fnv1a hashing is stable and sensitive") {
  CHECK(fnv1a64("") == 14695981039346656037ULL);
  CHECK(fnv1a64("a") != fnv1a64("b"));
  CHECK(hash_combine(1, 2) != hash_combine(2, 1));
}

TEST_CASE("zero-epoch training returns the initialization checkpoint") {
  DistillAssembly a = small_assembly(200);
  OptimState opt;
  Checkpoint init = assembly_checkpoint(a, opt, 0, 0);
  TrainConfig cfg;
  cfg.epochs = 0;
  DistillRunResult r = train_distill(cfg, small_images(4), a);
  CHECK(r.log.empty());
  CHECK(checkpoint_content_hash(r.checkpoint) == checkpoint_content_hash(init));
}

TEST_CASE("training is deterministic under the seed and logs one line per step") {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 5;
  auto images = small_images(6);  // ceil(6/4)=2 steps per epoch
  auto run = [&] {
    DistillAssembly a = small_assembly(201);
    return train_distill(cfg, images, a);
  };
  DistillRunResult r1 = run(), r2 = run();
  CHECK(r1.log.size() == 6);
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].step == i);
    CHECK(r1.log[i].total == r2.log[i].total);
  }
  CHECK(checkpoint_content_hash(r1.checkpoint) ==
        checkpoint_content_hash(r2.checkpoint));

  TrainConfig other = cfg;
  other.seed = 6;
  DistillAssembly a3 = small_assembly(201);
  DistillRunResult r3 = train_distill(other, images, a3);
  CHECK(checkpoint_content_hash(r1.checkpoint) !=
        checkpoint_content_hash(r3.checkpoint));
}

TEST_CASE("checkpoint file round-trip is byte-identical") {
  DistillAssembly a = small_assembly(202);
  OptimState opt;
  Checkpoint c = assembly_checkpoint(a, opt, 0xdeadbeef, 42);
  std::string p1 = temp_path("ckpt1.bin"), p2 = temp_path("ckpt2.bin");
  save_checkpoint(p1, c);
  Checkpoint loaded = load_checkpoint(p1);
  CHECK(loaded.config_hash == 0xdeadbeef);
  CHECK(loaded.step == 42);
  save_checkpoint(p2, loaded);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK(!b1.empty());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("restored assembly reproduces the training trajectory") {
  auto images = small_images(4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.seed = 11;

  DistillAssembly a1 = small_assembly(203);
  OptimState o1;
  Checkpoint snap = assembly_checkpoint(a1, o1, 0, 0);

  // same teachers (frozen nets live outside the checkpoint), learnable state
  // perturbed and then overwritten by the restore
  DistillAssembly a2 = small_assembly(203);
  for (auto& [name, arr] : a2.student_params)
    for (auto& v : arr.values) v += 0.5;
  OptimState o2;
  restore_assembly(a2, o2, snap);
  DistillRunResult r1 = train_distill(cfg, images, a1);
  DistillRunResult r2 = train_distill(cfg, images, a2);
  CHECK(checkpoint_content_hash(r1.checkpoint) ==
        checkpoint_content_hash(r2.checkpoint));
}

TEST_CASE("distillation loss decreases on a fixed synthetic stream") {
  TrainConfig cfg;
  cfg.epochs = 50;  // 4 images / batch 2 -> 100 steps
  cfg.batch_size = 2;
  cfg.base_lr = 1e-3;
  cfg.seed = 21;
  DistillAssembly a = small_assembly(204, 0.0);
  DistillRunResult r = train_distill(cfg, small_images(4), a);
  REQUIRE(r.log.size() == 100);
  CHECK(r.log.back().total < r.log.front().total);
}

namespace {

struct ProbeFixture {
  ProbeData train, test;
  ViTConfig cfg;
  ParamSet params;
};

ProbeFixture probe_fixture(std::size_t n_train, std::size_t n_test) {
  ProbeFixture f;
  f.cfg = vit_preset("toy-grad-check");
  f.params = init_vit_params(f.cfg, 7);
  SyntheticSpec spec;
  spec.seed = 50;
  spec.channels = 1;
  spec.height = 16;
  spec.width = 16;
  spec.classes = 2;
  spec.frames_per_video = 4;
  SyntheticDataset all = generate_synthetic(spec, n_train + n_test);
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    ProbeData& dst = i < n_train ? f.train : f.test;
    dst.images.push_back(all.images[i]);
    dst.labels.push_back(all.labels[i]);
    dst.manifest.records.push_back(all.manifest.records[i]);
  }
  return f;
}

}  // namespace

TEST_CASE("probe-frozen leaves the encoder untouched; finetune changes it") {
  ProbeFixture f = probe_fixture(8, 4);
  TrainConfig cfg;
  cfg.regime = TrainRegime::probe_frozen;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.base_lr = 1e-2;
  cfg.seed = 3;

  Checkpoint before;
  before.sections = f.params;
  std::uint64_t h_before = checkpoint_content_hash(before);

  ProbeResult frozen = train_probe(cfg, f.cfg, f.params, f.train, f.test, 2);
  Checkpoint after;
  after.sections = frozen.encoder_params;
  CHECK(checkpoint_content_hash(after) == h_before);

  cfg.regime = TrainRegime::probe_finetune;
  ProbeResult tuned = train_probe(cfg, f.cfg, f.params, f.train, f.test, 2);
  Checkpoint after_ft;
  after_ft.sections = tuned.encoder_params;
  CHECK(checkpoint_content_hash(after_ft) != h_before);
}

TEST_CASE("frozen probe learns separable synthetic classes") {
  ProbeFixture f = probe_fixture(16, 8);
  TrainConfig cfg;
  cfg.regime = TrainRegime::probe_frozen;
  cfg.epochs = 200;
  cfg.batch_size = 8;
  cfg.base_lr = 5e-2;
  cfg.seed = 4;
  ProbeResult r = train_probe(cfg, f.cfg, f.params, f.train, f.test, 2);
  CHECK(r.report.at("train_accuracy") >= 0.99);
}

TEST_CASE("few-shot k=1 keeps exactly one video's frames") {
  ProbeFixture f = probe_fixture(16, 4);  // 4 videos of 4 frames in train
  TrainConfig cfg;
  cfg.regime = TrainRegime::probe_frozen;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.few_shot_k = 1;
  cfg.seed = 9;
  ProbeResult r = train_probe(cfg, f.cfg, f.params, f.train, f.test, 2);
  CHECK(r.train_frames == 4);

  cfg.few_shot_k = 99;
  CHECK_THROWS(train_probe(cfg, f.cfg, f.params, f.train, f.test, 2));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.min_lr = 1.0;
  c.base_lr = 0.1;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.few_shot_k = 2;  // distill regime
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.regime = TrainRegime::probe_frozen;
  c.few_shot_k = 7;
  CHECK_THROWS(c.validate());
}
