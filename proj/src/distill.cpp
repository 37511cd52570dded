#include "zen/distill.hpp"

#include <cmath>
#include <stdexcept>

namespace zen {

namespace {

Array trunc_normal_flat(std::vector<std::size_t> shape, double stddev,
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

ParamSet init_adaptor_params(const AdaptorConfig& cfg, std::uint64_t seed) {
  if (cfg.d_in == 0 || cfg.d_mid == 0 || cfg.d_out == 0)
    throw std::invalid_argument("AdaptorConfig: zero dimension");
  std::mt19937_64 rng(seed);
  ParamSet p;
  p["w1"] = trunc_normal_flat({cfg.d_in, cfg.d_mid}, 0.02, rng);
  p["b1"] = Array::zeros({cfg.d_mid});
  p["ln.g"] = Array({cfg.d_mid}, std::vector<double>(cfg.d_mid, 1.0));
  p["ln.b"] = Array::zeros({cfg.d_mid});
  p["w2"] = trunc_normal_flat({cfg.d_mid, cfg.d_out}, 0.02, rng);
  p["b2"] = Array::zeros({cfg.d_out});
  return p;
}

Tensor adaptor_forward(const Tensor& x, const std::map<std::string, Tensor>& p) {
  auto get = [&](const char* k) -> const Tensor& {
    auto it = p.find(k);
    if (it == p.end())
      throw std::invalid_argument(std::string("adaptor_forward: missing param ") + k);
    return it->second;
  };
  Tensor mid = add_rowvec(matmul(x, get("w1")), get("b1"));
  Tensor act = gelu(layer_norm(mid, get("ln.g"), get("ln.b")));
  return add_rowvec(matmul(act, get("w2")), get("b2"));
}

FeatureStandardizer::FeatureStandardizer(std::size_t dim, double momentum, double eps)
    : dim_(dim), momentum_(momentum), eps_(eps),
      running_mean_(dim, 0.0), running_var_(dim, 1.0) {
  if (dim == 0) throw std::invalid_argument("FeatureStandardizer: dim == 0");
  if (momentum <= 0.0 || momentum >= 1.0)
    throw std::invalid_argument("FeatureStandardizer: momentum must be in (0,1)");
  if (eps <= 0.0) throw std::invalid_argument("FeatureStandardizer: eps <= 0");
}

Array FeatureStandardizer::standardize(const Array& batch, bool training) {
  std::size_t cols = batch.shape.empty() ? 0 : batch.shape.back();
  if (cols != dim_)
    throw ShapeError("standardize: feature dim " + std::to_string(cols) +
                     " does not match state dim " + std::to_string(dim_));
  std::size_t rows = batch.size() / cols;
  if (training) {
    std::vector<double> mean(cols, 0.0), var(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mean[c] += batch.values[r * cols + c];
    for (auto& m : mean) m /= double(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        double d = batch.values[r * cols + c] - mean[c];
        var[c] += d * d;
      }
    for (auto& v : var) v /= double(rows);
    if (updates_seen_ == 0) {
      running_mean_ = mean;
      running_var_ = var;
    } else {
      for (std::size_t c = 0; c < cols; ++c) {
        running_mean_[c] = momentum_ * running_mean_[c] + (1.0 - momentum_) * mean[c];
        running_var_[c] = momentum_ * running_var_[c] + (1.0 - momentum_) * var[c];
      }
    }
    ++updates_seen_;
  } else if (updates_seen_ == 0) {
    throw std::logic_error("standardize: eval mode before any training update");
  }
  Array out = batch;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out.values[r * cols + c] = (batch.values[r * cols + c] - running_mean_[c]) /
                                 std::sqrt(running_var_[c] + eps_);
  return out;
}

Array FeatureStandardizer::state() const {
  std::vector<double> v;
  v.reserve(2 * dim_ + 1);
  v.insert(v.end(), running_mean_.begin(), running_mean_.end());
  v.insert(v.end(), running_var_.begin(), running_var_.end());
  v.push_back(double(updates_seen_));
  return Array({2 * dim_ + 1}, std::move(v));
}

void FeatureStandardizer::load_state(const Array& a) {
  if (a.size() != 2 * dim_ + 1)
    throw ShapeError("FeatureStandardizer: bad state size");
  running_mean_.assign(a.values.begin(), a.values.begin() + dim_);
  running_var_.assign(a.values.begin() + dim_, a.values.begin() + 2 * dim_);
  updates_seen_ = std::size_t(a.values[2 * dim_]);
}

void DistillConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0 || alpha + beta <= 0.0)
    throw std::invalid_argument("DistillConfig: need alpha,beta >= 0 and alpha+beta > 0");
  if (p_drop < 0.0 || p_drop > 1.0)
    throw std::invalid_argument("DistillConfig: p_drop must be in [0,1]");
  if (ema_momentum <= 0.0 || ema_momentum >= 1.0)
    throw std::invalid_argument("DistillConfig: ema_momentum must be in (0,1)");
  if (smooth_l1_delta <= 0.0)
    throw std::invalid_argument("DistillConfig: smooth_l1_delta must be positive");
}

nlohmann::json LossReport::to_json() const {
  return {{"step", step},
          {"feature_losses", feature_losses},
          {"teacher_losses", teacher_losses},
          {"masks", masks},
          {"total", total},
          {"zero_norm_flag", zero_norm_flag},
          {"single_teacher_flag", single_teacher_flag}};
}

LossReport LossReport::from_json(const nlohmann::json& j) {
  LossReport r;
  r.step = j.at("step").get<std::size_t>();
  r.feature_losses = j.at("feature_losses").get<std::map<std::string, double>>();
  r.teacher_losses = j.at("teacher_losses").get<std::map<std::string, double>>();
  r.masks = j.at("masks").get<std::map<std::string, int>>();
  r.total = j.at("total").get<double>();
  r.zero_norm_flag = j.at("zero_norm_flag").get<bool>();
  r.single_teacher_flag = j.at("single_teacher_flag").get<bool>();
  return r;
}

FeatureLossResult feature_loss(const Tensor& adapted, const Tensor& target,
                               double alpha, double beta, double delta) {
  if (adapted.shape() != target.shape())
    throw ShapeError("feature_loss: shape mismatch " + shape_str(adapted.shape()) +
                     " vs " + shape_str(target.shape()));
  Tensor a = adapted.rank() == 1 ? reshape(adapted, {1, adapted.size()}) : adapted;
  Tensor t = target.rank() == 1
                 ? Tensor::constant({1, target.size()}, target.values())
                 : target;
  constexpr double kNormFloor = 1e-12;

  Tensor dot = reduce_sum(mul(a, t), 1);
  Tensor na = sqrt_elem(reduce_sum(mul(a, a), 1));
  Tensor nt = sqrt_elem(reduce_sum(mul(t, t), 1));
  Tensor denom = clamp_min(mul(na, nt), kNormFloor);
  Tensor cos = divide(dot, denom);
  Tensor cos_loss = affine(mean_all(cos), -1.0, 1.0);
  Tensor l1_loss = mean_all(smooth_l1(sub(a, t), delta));
  FeatureLossResult res;
  res.loss = add(scale(cos_loss, alpha), scale(l1_loss, beta));
  for (std::size_t r = 0; r < na.size(); ++r)
    if (na.values()[r] * nt.values()[r] <= kNormFloor) res.zero_norm_flag = true;
  return res;
}

Tensor vision_teacher_loss(const Tensor& cls_loss, const Tensor& patch_loss) {
  return scale(add(cls_loss, patch_loss), 0.5);
}

FeatureLossResult vl_teacher_loss(const Tensor& student_patch,
                                  const std::map<std::string, Tensor>& adaptor,
                                  const Tensor& pooled_target,
                                  const DistillConfig& cfg) {
  Tensor pooled = reduce_mean(student_patch, 0);  // mean over tokens
  Tensor adapted = adaptor_forward(reshape(pooled, {1, pooled.size()}), adaptor);
  Tensor t = pooled_target.rank() == 1
                 ? Tensor::constant({1, pooled_target.size()}, pooled_target.values())
                 : pooled_target;
  return feature_loss(adapted, t, cfg.alpha, cfg.beta, cfg.smooth_l1_delta);
}

TeacherMask sample_teacher_masks(
    const std::vector<std::pair<std::string, double>>& teacher_losses, double p_drop,
    std::mt19937_64& rng) {
  if (teacher_losses.empty())
    throw std::invalid_argument("sample_teacher_masks: no teachers");
  TeacherMask out;
  for (const auto& [id, loss] : teacher_losses) out.mask[id] = 1;
  if (teacher_losses.size() == 1) {
    out.single_teacher = true;
    return out;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  if (u < p_drop) {
    std::size_t smallest = 0;
    for (std::size_t i = 1; i < teacher_losses.size(); ++i)
      if (std::abs(teacher_losses[i].second) <
          std::abs(teacher_losses[smallest].second))
        smallest = i;  // tie keeps the lower index
    out.mask[teacher_losses[smallest].first] = 0;
  }
  return out;
}

namespace {

const std::map<std::string, Tensor>& adaptor_for(
    const std::map<std::string, std::map<std::string, Tensor>>& adaptors,
    const std::string& key) {
  auto it = adaptors.find(key);
  if (it == adaptors.end())
    throw std::invalid_argument("total_distill_loss: missing adaptor \"" + key + "\"");
  return it->second;
}

FeatureStandardizer& standardizer_for(
    std::map<std::string, FeatureStandardizer>& standardizers, const std::string& key) {
  auto it = standardizers.find(key);
  if (it == standardizers.end())
    throw std::invalid_argument("total_distill_loss: missing standardizer \"" + key +
                                "\"");
  return it->second;
}

// stack per-image feature tensors into one matrix, preserving the graph
Tensor stack_rows(const std::vector<Tensor>& rows) {
  Tensor out;
  for (const auto& r : rows) {
    Tensor row = r.rank() == 1 ? reshape(r, {1, r.size()}) : r;
    out = out.defined() ? concat_rows(out, row) : row;
  }
  return out;
}

Array gather_rows(const std::vector<FeatureBundle>& bundles,
                  Tensor FeatureBundle::* field) {
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  for (const auto& b : bundles) {
    const Tensor& t = b.*field;
    if (!t.defined())
      throw std::invalid_argument("total_distill_loss: teacher bundle missing feature");
    std::size_t c = t.shape().back();
    if (cols == 0) cols = c;
    if (c != cols) throw ShapeError("total_distill_loss: inconsistent teacher dims");
    values.insert(values.end(), t.values().begin(), t.values().end());
    rows += t.size() / c;
  }
  return Array({rows, cols}, std::move(values));
}

}  // namespace

DistillOutput total_distill_loss(
    const std::vector<FeatureBundle>& student,
    const std::vector<std::pair<const TeacherSpec*, std::vector<FeatureBundle>>>& teachers,
    const std::map<std::string, std::map<std::string, Tensor>>& adaptors,
    std::map<std::string, FeatureStandardizer>& standardizers,
    const DistillConfig& cfg, std::mt19937_64& rng, bool training) {
  cfg.validate();
  if (student.empty()) throw std::invalid_argument("total_distill_loss: empty batch");

  DistillOutput out;
  std::vector<std::pair<std::string, double>> per_teacher_vals;
  std::map<std::string, Tensor> per_teacher_loss;

  std::vector<Tensor> student_cls, student_patch, student_pooled;
  for (const auto& sb : student) {
    student_cls.push_back(sb.cls);
    student_patch.push_back(sb.patch);
    student_pooled.push_back(reduce_mean(sb.patch, 0));
  }

  for (const auto& [spec, bundles] : teachers) {
    if (bundles.size() != student.size())
      throw std::invalid_argument("total_distill_loss: batch size mismatch for " +
                                  spec->id);
    Tensor loss_t;
    if (spec->kind == TeacherKind::vision) {
      Array t_cls = gather_rows(bundles, &FeatureBundle::cls);
      Array t_patch = gather_rows(bundles, &FeatureBundle::patch);
      Array y_cls =
          standardizer_for(standardizers, spec->id + ".cls").standardize(t_cls, training);
      Array y_patch = standardizer_for(standardizers, spec->id + ".patch")
                          .standardize(t_patch, training);
      Tensor a_cls = adaptor_forward(stack_rows(student_cls),
                                     adaptor_for(adaptors, spec->id + ".cls"));
      Tensor a_patch = adaptor_forward(stack_rows(student_patch),
                                       adaptor_for(adaptors, spec->id + ".patch"));
      auto l_cls = feature_loss(a_cls, Tensor::constant(y_cls), cfg.alpha, cfg.beta,
                                cfg.smooth_l1_delta);
      auto l_patch = feature_loss(a_patch, Tensor::constant(y_patch), cfg.alpha,
                                  cfg.beta, cfg.smooth_l1_delta);
      out.report.zero_norm_flag |= l_cls.zero_norm_flag || l_patch.zero_norm_flag;
      out.report.feature_losses[spec->id + ".cls"] = l_cls.loss.item();
      out.report.feature_losses[spec->id + ".patch"] = l_patch.loss.item();
      loss_t = vision_teacher_loss(l_cls.loss, l_patch.loss);
    } else {
      Array t_pooled = gather_rows(bundles, &FeatureBundle::pooled);
      Array y_pooled = standardizer_for(standardizers, spec->id + ".pooled")
                           .standardize(t_pooled, training);
      Tensor a_pooled = adaptor_forward(stack_rows(student_pooled),
                                        adaptor_for(adaptors, spec->id + ".pooled"));
      auto l_pooled = feature_loss(a_pooled, Tensor::constant(y_pooled), cfg.alpha,
                                   cfg.beta, cfg.smooth_l1_delta);
      out.report.zero_norm_flag |= l_pooled.zero_norm_flag;
      out.report.feature_losses[spec->id + ".pooled"] = l_pooled.loss.item();
      loss_t = l_pooled.loss;
    }
    per_teacher_vals.emplace_back(spec->id, loss_t.item());
    per_teacher_loss[spec->id] = loss_t;
    out.report.teacher_losses[spec->id] = loss_t.item();
  }

  TeacherMask masks = sample_teacher_masks(per_teacher_vals, cfg.p_drop, rng);
  out.report.masks = masks.mask;
  out.report.single_teacher_flag = masks.single_teacher;

  Tensor total;
  double total_val = 0.0;
  for (const auto& [id, val] : per_teacher_vals) {
    int m = masks.mask.at(id);
    Tensor term = scale(per_teacher_loss.at(id), double(m));
    total = total.defined() ? add(total, term) : term;
    total_val += double(m) * val;
  }
  out.total = total;
  out.report.total = total_val;
  return out;
}

}  // namespace zen
