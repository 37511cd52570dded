#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zen/data.hpp"
#include "zen/distill.hpp"
#include "zen/encoders.hpp"
#include "zen/metrics.hpp"
#include "zen/tensor.hpp"

namespace zen {

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v);

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptimState {
  OptimConfig cfg;
  std::size_t t = 0;
  std::map<std::string, Array> m;  // first moments, mirrors parameter shapes
  std::map<std::string, Array> v;  // second moments
};

// Decoupled weight decay, then the standard bias-corrected Adam update.
// Throws on non-finite gradients, naming the step.
void adamw_step(std::map<std::string, Array>& params,
                const std::map<std::string, std::vector<double>>& grads,
                OptimState& state);

// Linear warmup 0 -> base_lr over warmup_steps, then cosine to min_lr.
double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
             double base_lr, double min_lr);

enum class TrainRegime { distill, probe_frozen, probe_finetune };

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  double base_lr = 1e-4;
  double min_lr = 1e-6;
  double warmup_epochs = 0.0;
  std::uint64_t seed = 0;
  TrainRegime regime = TrainRegime::distill;
  std::optional<std::size_t> few_shot_k;  // 1-5 whole videos, probe regimes only
  double weight_decay = 0.0;
  void validate() const;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::map<std::string, Array> sections;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);
std::uint64_t checkpoint_content_hash(const Checkpoint& c);

// Everything a distillation step touches: student, teachers, adaptors and
// standardizers keyed "<teacher_id>.<feature>".
struct DistillAssembly {
  ViTConfig student_cfg;
  ParamSet student_params;
  std::vector<TeacherSpec> teachers;
  std::map<std::string, ParamSet> adaptor_params;
  std::map<std::string, FeatureStandardizer> standardizers;
  DistillConfig distill;
};

DistillAssembly build_assembly(const ViTConfig& student_cfg,
                               std::vector<TeacherSpec> teachers,
                               const DistillConfig& distill, std::uint64_t seed);

Checkpoint assembly_checkpoint(const DistillAssembly& a, const OptimState& opt,
                               std::uint64_t config_hash, std::uint64_t step);
void restore_assembly(DistillAssembly& a, OptimState& opt, const Checkpoint& c);

struct DistillRunResult {
  Checkpoint checkpoint;
  std::vector<LossReport> log;
};

DistillRunResult train_distill(const TrainConfig& cfg, const std::vector<Array>& images,
                               DistillAssembly& assembly,
                               std::uint64_t config_hash = 0);

struct ProbeData {
  std::vector<Array> images;
  std::vector<int> labels;                          // single-label path
  std::vector<std::vector<int>> multilabels;        // multi-label path (optional)
  FrameManifest manifest;
};

struct ProbeResult {
  ParamSet classifier;       // "w" [d x C], "b" [C]
  ParamSet encoder_params;   // updated only in the finetune regime
  MetricReport report;
  std::size_t train_frames = 0;
};

ProbeResult train_probe(const TrainConfig& cfg, const ViTConfig& encoder_cfg,
                        const ParamSet& encoder_params, const ProbeData& train_data,
                        const ProbeData& test_data, std::size_t classes);

}  // namespace zen
