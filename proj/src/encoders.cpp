#include "zen/encoders.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace zen {

void ViTConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || embed_dim == 0 || heads == 0)
    throw std::invalid_argument("ViTConfig: zero dimension");
  if (image_size % patch_size != 0)
    throw std::invalid_argument("ViTConfig: image_size " + std::to_string(image_size) +
                                " not divisible by patch_size " +
                                std::to_string(patch_size));
  if (embed_dim % heads != 0)
    throw std::invalid_argument("ViTConfig: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by heads " + std::to_string(heads));
  if (mlp_ratio <= 0.0) throw std::invalid_argument("ViTConfig: mlp_ratio <= 0");
}

ViTConfig vit_preset(const std::string& name) {
  ViTConfig c;
  if (name == "toy") {
    c = ViTConfig{32, 8, 3, 32, 2, 4, 4.0};
  } else if (name == "toy-grad-check") {
    c = ViTConfig{16, 8, 1, 16, 1, 2, 2.0};
  } else if (name == "vit-base-12") {
    c = ViTConfig{224, 16, 3, 768, 12, 12, 4.0};
  } else if (name == "vit-base-13") {
    c = ViTConfig{224, 16, 3, 768, 13, 12, 4.0};
  } else if (name == "vit-large") {
    c = ViTConfig{224, 16, 3, 1024, 24, 16, 4.0};
  } else {
    throw std::invalid_argument("unknown ViT preset: " + name);
  }
  c.validate();
  return c;
}

namespace {

// truncated normal(0, std) cut at 2 std, transformer-style init
Array trunc_normal(std::vector<std::size_t> shape, double stddev,
                   std::mt19937_64& rng) {
  Array a = Array::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : a.values) {
    double x;
    do {
      x = dist(rng);
    } while (std::abs(x) > 2.0 * stddev);
    v = x;
  }
  return a;
}

}  // namespace

ParamSet init_vit_params(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const double w_std = 0.02;
  std::size_t d = cfg.embed_dim;
  ParamSet p;
  p["patch_embed.w"] = trunc_normal({cfg.patch_dim(), d}, w_std, rng);
  p["patch_embed.b"] = Array::zeros({d});
  p["cls"] = trunc_normal({1, d}, w_std, rng);
  p["pos"] = trunc_normal({cfg.n_patches() + 1, d}, w_std, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    std::string b = "blocks." + std::to_string(i) + ".";
    p[b + "ln1.g"] = Array({d}, std::vector<double>(d, 1.0));
    p[b + "ln1.b"] = Array::zeros({d});
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      p[b + w] = trunc_normal({d, d}, w_std, rng);
    for (const char* bias : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      p[b + bias] = Array::zeros({d});
    p[b + "ln2.g"] = Array({d}, std::vector<double>(d, 1.0));
    p[b + "ln2.b"] = Array::zeros({d});
    std::size_t hid = cfg.mlp_hidden();
    p[b + "mlp.w1"] = trunc_normal({d, hid}, w_std, rng);
    p[b + "mlp.b1"] = Array::zeros({hid});
    p[b + "mlp.w2"] = trunc_normal({hid, d}, w_std, rng);
    p[b + "mlp.b2"] = Array::zeros({d});
  }
  p["final_ln.g"] = Array({d}, std::vector<double>(d, 1.0));
  p["final_ln.b"] = Array::zeros({d});
  return p;
}

std::map<std::string, Tensor> bind_params(Tape* tape, const ParamSet& params,
                                          bool tracked) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, a] : params)
    out[name] = tracked ? tape->leaf(a) : Tensor::constant(a);
  return out;
}

Array patchify(const Array& image, std::size_t patch_size) {
  if (image.shape.size() != 3)
    throw ShapeError("patchify: expected [c x H x W] image, got " +
                     shape_str(image.shape));
  std::size_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0)
    throw ShapeError("patchify: image " + shape_str(image.shape) +
                     " not divisible by patch size " + std::to_string(patch_size));
  std::size_t gh = h / patch_size, gw = w / patch_size;
  std::size_t pd = c * patch_size * patch_size;
  Array out = Array::zeros({gh * gw, pd});
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      std::size_t patch_idx = py * gw + px;
      std::size_t o = patch_idx * pd;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < patch_size; ++y)
          for (std::size_t x = 0; x < patch_size; ++x)
            out.values[o++] =
                image.values[ch * h * w + (py * patch_size + y) * w +
                             px * patch_size + x];
    }
  return out;
}

namespace {

const Tensor& pget(const std::map<std::string, Tensor>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end())
    throw std::invalid_argument("missing parameter: " + name);
  return it->second;
}

Tensor attention(const Tensor& x, const ViTConfig& cfg,
                 const std::map<std::string, Tensor>& p, const std::string& b) {
  Tensor q = add_rowvec(matmul(x, pget(p, b + "attn.wq")), pget(p, b + "attn.bq"));
  Tensor k = add_rowvec(matmul(x, pget(p, b + "attn.wk")), pget(p, b + "attn.bk"));
  Tensor v = add_rowvec(matmul(x, pget(p, b + "attn.wv")), pget(p, b + "attn.bv"));
  std::size_t dh = cfg.embed_dim / cfg.heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    head_outs.push_back(matmul(softmax_rows(scores), vh));
  }
  Tensor merged = cfg.heads == 1 ? head_outs[0] : concat_cols(head_outs);
  return add_rowvec(matmul(merged, pget(p, b + "attn.wo")), pget(p, b + "attn.bo"));
}

}  // namespace

FeatureBundle vit_forward(const Array& image, const ViTConfig& cfg,
                          const std::map<std::string, Tensor>& p) {
  cfg.validate();
  Array patches = patchify(image, cfg.patch_size);
  Tensor tokens = add_rowvec(
      matmul(Tensor::constant(patches), pget(p, "patch_embed.w")),
      pget(p, "patch_embed.b"));
  Tensor x = add(concat_rows(pget(p, "cls"), tokens), pget(p, "pos"));
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    std::string b = "blocks." + std::to_string(i) + ".";
    Tensor normed = layer_norm(x, pget(p, b + "ln1.g"), pget(p, b + "ln1.b"));
    x = add(x, attention(normed, cfg, p, b));
    Tensor normed2 = layer_norm(x, pget(p, b + "ln2.g"), pget(p, b + "ln2.b"));
    Tensor hid = gelu(add_rowvec(matmul(normed2, pget(p, b + "mlp.w1")),
                                 pget(p, b + "mlp.b1")));
    Tensor mlp_out = add_rowvec(matmul(hid, pget(p, b + "mlp.w2")),
                                pget(p, b + "mlp.b2"));
    x = add(x, mlp_out);
  }
  x = layer_norm(x, pget(p, "final_ln.g"), pget(p, "final_ln.b"));
  FeatureBundle out;
  out.cls = reshape(slice_rows(x, 0, 1), {cfg.embed_dim});
  out.patch = slice_rows(x, 1, cfg.n_patches());
  return out;
}

std::vector<FeatureBundle> student_forward(const std::vector<Array>& images,
                                           const ViTConfig& cfg,
                                           const std::map<std::string, Tensor>& p) {
  std::vector<FeatureBundle> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(vit_forward(im, cfg, p));
  return out;
}

TeacherSpec make_vision_teacher(const std::string& id, const ViTConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  TeacherSpec t;
  t.id = id;
  t.kind = TeacherKind::vision;
  t.output_dim = cfg.embed_dim;
  t.seed = seed;
  t.vit = cfg;
  t.params = init_vit_params(cfg, seed);
  return t;
}

namespace {

ParamSet init_vl_params(const VlTeacherConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double w_std = 0.02;
  std::size_t pd = cfg.channels * cfg.patch_size * cfg.patch_size;
  ParamSet p;
  p["w1"] = trunc_normal({pd, cfg.hidden_dim}, w_std, rng);
  p["b1"] = Array::zeros({cfg.hidden_dim});
  p["w2"] = trunc_normal({cfg.hidden_dim, cfg.output_dim}, w_std, rng);
  p["b2"] = Array::zeros({cfg.output_dim});
  return p;
}

}  // namespace

TeacherSpec make_vl_teacher(const std::string& id, const VlTeacherConfig& cfg,
                            std::uint64_t seed) {
  if (cfg.image_size % cfg.patch_size != 0)
    throw std::invalid_argument("VlTeacherConfig: image not divisible by patch");
  TeacherSpec t;
  t.id = id;
  t.kind = TeacherKind::vision_language;
  t.output_dim = cfg.output_dim;
  t.seed = seed;
  t.vl = cfg;
  t.params = init_vl_params(cfg, seed);
  return t;
}

Tensor vl_feature_map(const Array& image, const TeacherSpec& spec) {
  if (spec.kind != TeacherKind::vision_language)
    throw std::invalid_argument("vl_feature_map: teacher " + spec.id +
                                " is not a vision-language teacher");
  Array patches = patchify(image, spec.vl.patch_size);
  auto p = bind_params(nullptr, spec.params, false);
  Tensor hid = gelu(add_rowvec(matmul(Tensor::constant(patches), p.at("w1")),
                               p.at("b1")));
  return add_rowvec(matmul(hid, p.at("w2")), p.at("b2"));
}

std::vector<FeatureBundle> teacher_forward(const std::vector<Array>& images,
                                           const TeacherSpec& spec) {
  std::vector<FeatureBundle> out;
  out.reserve(images.size());
  if (spec.kind == TeacherKind::vision) {
    auto p = bind_params(nullptr, spec.params, false);
    for (const auto& im : images) out.push_back(vit_forward(im, spec.vit, p));
  } else if (spec.kind == TeacherKind::vision_language) {
    for (const auto& im : images) {
      FeatureBundle fb;
      // spatial mean of the pre-pool map: global average pooling
      fb.pooled = reduce_mean(vl_feature_map(im, spec), 0);
      out.push_back(std::move(fb));
    }
  } else {
    throw std::invalid_argument("teacher_forward: unknown teacher kind");
  }
  return out;
}

}  // namespace zen
