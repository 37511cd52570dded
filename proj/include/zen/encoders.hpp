#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zen/tensor.hpp"

namespace zen {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t embed_dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;

  std::size_t n_patches() const {
    std::size_t g = image_size / patch_size;
    return g * g;
  }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t mlp_hidden() const {
    return std::size_t(double(embed_dim) * mlp_ratio + 0.5);
  }
  void validate() const;
};

// Named presets. "vit-base-13" mirrors the published 13-block configuration;
// "vit-base-12" is the conventional block count.
ViTConfig vit_preset(const std::string& name);

// Named parameter collection; std::map keeps iteration deterministic.
using ParamSet = std::map<std::string, Array>;

ParamSet init_vit_params(const ViTConfig& cfg, std::uint64_t seed);

// One encoder's outputs for one image. Absent fields are default tensors.
struct FeatureBundle {
  Tensor cls;     // [embed_dim]
  Tensor patch;   // [n_patches x embed_dim]
  Tensor pooled;  // [output_dim]
};

// Binds a ParamSet to a tape (tracked, trainable) or to constants (frozen).
std::map<std::string, Tensor> bind_params(Tape* tape, const ParamSet& params,
                                          bool tracked);

// Non-overlapping patches in row-major patch order, each flattened
// channel-first: output [n_patches x channels*p*p].
Array patchify(const Array& image, std::size_t patch_size);

// Pre-norm ViT forward for one image; differentiable through bound params.
FeatureBundle vit_forward(const Array& image, const ViTConfig& cfg,
                          const std::map<std::string, Tensor>& p);

std::vector<FeatureBundle> student_forward(const std::vector<Array>& images,
                                           const ViTConfig& cfg,
                                           const std::map<std::string, Tensor>& p);

enum class TeacherKind { vision, vision_language };

struct VlTeacherConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t hidden_dim = 24;
  std::size_t output_dim = 12;
};

struct TeacherSpec {
  std::string id;
  TeacherKind kind = TeacherKind::vision;
  std::size_t output_dim = 0;
  std::uint64_t seed = 0;
  ViTConfig vit;        // vision kind
  VlTeacherConfig vl;   // vision-language kind
  ParamSet params;      // frozen after construction
};

TeacherSpec make_vision_teacher(const std::string& id, const ViTConfig& cfg,
                                std::uint64_t seed);
TeacherSpec make_vl_teacher(const std::string& id, const VlTeacherConfig& cfg,
                            std::uint64_t seed);

// Frozen forward: outputs are untracked constants.
// vision kind emits cls+patch; vision-language kind emits pooled (GAP).
std::vector<FeatureBundle> teacher_forward(const std::vector<Array>& images,
                                           const TeacherSpec& spec);

// Pre-pool feature map of the vision-language teacher, for verification.
Tensor vl_feature_map(const Array& image, const TeacherSpec& spec);

}  // namespace zen
