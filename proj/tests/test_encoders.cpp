#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "zen/encoders.hpp"

using namespace zen;

namespace {

Array random_image(std::size_t c, std::size_t hw, std::mt19937_64& rng) {
  Array a = Array::zeros({c, hw, hw});
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (auto& v : a.values) v = dist(rng);
  return a;
}

}  // namespace

TEST_CASE("patchify single full-size patch flattens the image") {
  std::mt19937_64 rng(1);
  Array img = random_image(1, 4, rng);
  Array p = patchify(img, 4);
  CHECK(p.shape == std::vector<std::size_t>{1, 16});
  CHECK(p.values == img.values);
}

TEST_CASE("patchify 2x2 grid top-left block") {
  std::mt19937_64 rng(2);
  Array img = random_image(1, 4, rng);
  Array p = patchify(img, 2);
  CHECK(p.shape == std::vector<std::size_t>{4, 4});
  // first patch is the top-left 2x2 block, row-major
  CHECK(p.values[0] == img.values[0 * 4 + 0]);
  CHECK(p.values[1] == img.values[0 * 4 + 1]);
  CHECK(p.values[2] == img.values[1 * 4 + 0]);
  CHECK(p.values[3] == img.values[1 * 4 + 1]);
}

TEST_CASE("patchify constant image gives identical patches") {
  Array img({1, 4, 4}, std::vector<double>(16, 0.7));
  Array p = patchify(img, 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(p.values[i * 4 + j] == 0.7);
}

TEST_CASE("patchify rejects indivisible dimensions") {
  Array img = Array::zeros({1, 5, 5});
  CHECK_THROWS_AS(patchify(img, 2), ShapeError);
}

TEST_CASE("presets and config validation") {
  ViTConfig toy = vit_preset("toy");
  CHECK(toy.embed_dim == 32);
  CHECK(toy.depth == 2);
  CHECK(toy.n_patches() == 16);
  CHECK(vit_preset("vit-base-13").depth == 13);
  CHECK(vit_preset("vit-base-12").depth == 12);
  CHECK(vit_preset("vit-base-13").embed_dim == 768);
  CHECK(vit_preset("vit-large").embed_dim == 1024);
  CHECK_THROWS(vit_preset("nope"));

  ViTConfig bad = toy;
  bad.patch_size = 7;
  CHECK_THROWS(bad.validate());
  bad = toy;
  bad.heads = 5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("init: weights truncated at two sigma, biases zero") {
  ParamSet p = init_vit_params(vit_preset("toy"), 9);
  for (double v : p.at("patch_embed.w").values) CHECK(std::abs(v) <= 0.04);
  for (double v : p.at("patch_embed.b").values) CHECK(v == 0.0);
  for (double v : p.at("blocks.0.ln1.g").values) CHECK(v == 1.0);
}

TEST_CASE("student_forward shape contract") {
  std::mt19937_64 rng(3);
  ViTConfig cfg = vit_preset("toy");
  auto bound = bind_params(nullptr, init_vit_params(cfg, 1), false);
  std::vector<Array> batch = {random_image(3, 32, rng), random_image(3, 32, rng)};
  auto out = student_forward(batch, cfg, bound);
  REQUIRE(out.size() == 2);
  CHECK(out[0].cls.shape() == std::vector<std::size_t>{cfg.embed_dim});
  CHECK(out[0].patch.shape() ==
        std::vector<std::size_t>{cfg.n_patches(), cfg.embed_dim});
}

TEST_CASE("permuting the batch permutes outputs identically") {
  std::mt19937_64 rng(4);
  ViTConfig cfg = vit_preset("toy");
  auto bound = bind_params(nullptr, init_vit_params(cfg, 2), false);
  std::vector<Array> batch = {random_image(3, 32, rng), random_image(3, 32, rng),
                              random_image(3, 32, rng)};
  auto fwd = student_forward(batch, cfg, bound);
  std::vector<Array> rev(batch.rbegin(), batch.rend());
  auto bwd = student_forward(rev, cfg, bound);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(fwd[i].cls.values() == bwd[2 - i].cls.values());
    CHECK(fwd[i].patch.values() == bwd[2 - i].patch.values());
  }
}

TEST_CASE("depth-0 forward equals the embedding bypass oracle") {
  std::mt19937_64 rng(5);
  ViTConfig cfg = vit_preset("toy");
  cfg.depth = 0;
  ParamSet params = init_vit_params(cfg, 3);
  auto bound = bind_params(nullptr, params, false);
  Array img = random_image(3, 32, rng);
  FeatureBundle fb = vit_forward(img, cfg, bound);

  // oracle: patch embed + cls prepend + pos, then final layer norm
  Array patches = patchify(img, cfg.patch_size);
  Tensor tokens = add_rowvec(matmul(Tensor::constant(patches),
                                    Tensor::constant(params.at("patch_embed.w"))),
                             Tensor::constant(params.at("patch_embed.b")));
  Tensor x = add(concat_rows(Tensor::constant(params.at("cls")), tokens),
                 Tensor::constant(params.at("pos")));
  Tensor normed = layer_norm(x, Tensor::constant(params.at("final_ln.g")),
                             Tensor::constant(params.at("final_ln.b")));
  Tensor patch_part = slice_rows(normed, 1, cfg.n_patches());
  CHECK(fb.patch.values() == patch_part.values());
}

TEST_CASE("frozen teacher is a pure function of seed, config, input") {
  std::mt19937_64 rng(6);
  ViTConfig cfg = vit_preset("toy");
  TeacherSpec t1 = make_vision_teacher("t", cfg, 42);
  TeacherSpec t2 = make_vision_teacher("t", cfg, 42);
  std::vector<Array> batch = {random_image(3, 32, rng)};
  auto a = teacher_forward(batch, t1);
  auto b = teacher_forward(batch, t1);  // repeated call
  auto c = teacher_forward(batch, t2);  // fresh spec, same seed
  CHECK(a[0].cls.values() == b[0].cls.values());
  CHECK(a[0].cls.values() == c[0].cls.values());
  CHECK(a[0].patch.values() == c[0].patch.values());

  TeacherSpec t3 = make_vision_teacher("t", cfg, 43);
  auto d = teacher_forward(batch, t3);
  CHECK(a[0].cls.values() != d[0].cls.values());
}

TEST_CASE("teacher outputs carry no gradient") {
  std::mt19937_64 rng(7);
  TeacherSpec t = make_vision_teacher("t", vit_preset("toy"), 1);
  std::vector<Array> batch = {random_image(3, 32, rng)};
  auto out = teacher_forward(batch, t);
  CHECK_FALSE(out[0].cls.tracked());
  CHECK_FALSE(out[0].patch.tracked());

  VlTeacherConfig vc;
  TeacherSpec vl = make_vl_teacher("vl", vc, 2);
  auto vout = teacher_forward(batch, vl);
  CHECK_FALSE(vout[0].pooled.tracked());
}

TEST_CASE("vision-language pooled output is the spatial mean of the feature map") {
  std::mt19937_64 rng(8);
  VlTeacherConfig vc;
  TeacherSpec vl = make_vl_teacher("vl", vc, 5);
  Array img = random_image(3, 32, rng);
  auto out = teacher_forward({img}, vl);
  Tensor fmap = vl_feature_map(img, vl);
  std::size_t rows = fmap.shape()[0], cols = fmap.shape()[1];
  for (std::size_t c = 0; c < cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += fmap.values()[r * cols + c];
    mean /= double(rows);
    CHECK(out[0].pooled.values()[c] == doctest::Approx(mean).epsilon(1e-14));
  }
  CHECK(out[0].pooled.size() == vc.output_dim);
}

TEST_CASE("missing parameter names the key") {
  std::mt19937_64 rng(9);
  ViTConfig cfg = vit_preset("toy");
  auto bound = bind_params(nullptr, init_vit_params(cfg, 1), false);
  bound.erase("blocks.1.mlp.w1");
  CHECK_THROWS_WITH_AS(vit_forward(random_image(3, 32, rng), cfg, bound),
                       doctest::Contains("blocks.1.mlp.w1"), std::invalid_argument);
}
