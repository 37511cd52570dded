#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "zen/encoders.hpp"
#include "zen/tensor.hpp"

namespace zen {

// linear -> LayerNorm -> GELU -> linear projection into a teacher's space
struct AdaptorConfig {
  std::size_t d_in = 0;
  std::size_t d_mid = 0;
  std::size_t d_out = 0;
};

// keys: w1, b1, ln.g, ln.b, w2, b2
ParamSet init_adaptor_params(const AdaptorConfig& cfg, std::uint64_t seed);

Tensor adaptor_forward(const Tensor& x, const std::map<std::string, Tensor>& p);

// Per-channel EMA standardization of teacher features. The first training
// batch seeds the running statistics so it standardizes itself.
class FeatureStandardizer {
 public:
  FeatureStandardizer(std::size_t dim, double momentum = 0.9, double eps = 1e-5);

  // batch: [N x d] (or rank-1 treated as one row); statistics taken per
  // channel over all leading axes. Output carries no gradient.
  Array standardize(const Array& batch, bool training);

  std::size_t dim() const { return dim_; }
  std::size_t updates_seen() const { return updates_seen_; }
  const std::vector<double>& running_mean() const { return running_mean_; }
  const std::vector<double>& running_var() const { return running_var_; }

  // flat state for checkpoints: [mean | var | updates_seen]
  Array state() const;
  void load_state(const Array& a);

 private:
  std::size_t dim_;
  double momentum_;
  double eps_;
  std::size_t updates_seen_ = 0;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
};

struct DistillConfig {
  double alpha = 0.9;
  double beta = 0.1;
  double p_drop = 0.25;
  double ema_momentum = 0.9;
  double smooth_l1_delta = 1.0;
  std::size_t adaptor_mid = 16;  // 2048 at full scale
  void validate() const;
};

struct TeacherMask {
  std::map<std::string, int> mask;  // teacher id -> 0/1
  bool single_teacher = false;      // dropping degenerates, all masks 1
};

struct LossReport {
  std::size_t step = 0;
  std::map<std::string, double> feature_losses;  // "<teacher>.cls" etc.
  std::map<std::string, double> teacher_losses;  // "<teacher>"
  std::map<std::string, int> masks;
  double total = 0.0;
  bool zero_norm_flag = false;
  bool single_teacher_flag = false;

  nlohmann::json to_json() const;
  static LossReport from_json(const nlohmann::json& j);
};

struct FeatureLossResult {
  Tensor loss;
  bool zero_norm_flag = false;
};

// alpha * mean_rows(1 - cos) + beta * mean_elems(smooth_l1), target detached
FeatureLossResult feature_loss(const Tensor& adapted, const Tensor& target,
                               double alpha, double beta, double delta);

Tensor vision_teacher_loss(const Tensor& cls_loss, const Tensor& patch_loss);

FeatureLossResult vl_teacher_loss(const Tensor& student_patch,
                                  const std::map<std::string, Tensor>& adaptor,
                                  const Tensor& pooled_target,
                                  const DistillConfig& cfg);

// Drops the teacher with the smaller |loss| with probability p_drop; ties go
// to the lower index. Teacher order follows the input vector.
TeacherMask sample_teacher_masks(const std::vector<std::pair<std::string, double>>& teacher_losses,
                                 double p_drop, std::mt19937_64& rng);

struct DistillOutput {
  Tensor total;
  LossReport report;
};

// Adaptor / standardizer keys: "<teacher_id>.cls", "<teacher_id>.patch",
// "<teacher_id>.pooled" per produced feature kind.
DistillOutput total_distill_loss(
    const std::vector<FeatureBundle>& student,
    const std::vector<std::pair<const TeacherSpec*, std::vector<FeatureBundle>>>& teachers,
    const std::map<std::string, std::map<std::string, Tensor>>& adaptors,
    std::map<std::string, FeatureStandardizer>& standardizers,
    const DistillConfig& cfg, std::mt19937_64& rng, bool training);

}  // namespace zen
