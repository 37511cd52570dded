#include "zen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "zen/serialize.hpp"

namespace zen {

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  std::uint64_t buf[2] = {seed, v};
  return fnv1a64(buf, sizeof(buf));
}

void adamw_step(std::map<std::string, Array>& params,
                const std::map<std::string, std::vector<double>>& grads,
                OptimState& state) {
  const OptimConfig& c = state.cfg;
  ++state.t;
  double bc1 = 1.0 - std::pow(c.beta1, double(state.t));
  double bc2 = 1.0 - std::pow(c.beta2, double(state.t));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    const std::vector<double>* g = git == grads.end() ? nullptr : &git->second;
    if (g && g->size() != p.size())
      throw ShapeError("adamw_step: gradient size mismatch for " + name);
    if (g)
      for (double gv : *g)
        if (!std::isfinite(gv))
          throw std::runtime_error("adamw_step: non-finite gradient in " + name +
                                   " at step " + std::to_string(state.t));
    if (!state.m.count(name)) state.m[name] = Array::zeros(p.shape);
    if (!state.v.count(name)) state.v[name] = Array::zeros(p.shape);
    Array& m = state.m[name];
    Array& v = state.v[name];
    for (std::size_t i = 0; i < p.size(); ++i) {
      // decoupled weight decay
      p.values[i] -= c.lr * c.weight_decay * p.values[i];
      double gv = g ? (*g)[i] : 0.0;
      m.values[i] = c.beta1 * m.values[i] + (1.0 - c.beta1) * gv;
      v.values[i] = c.beta2 * v.values[i] + (1.0 - c.beta2) * gv * gv;
      double mhat = m.values[i] / bc1;
      double vhat = v.values[i] / bc2;
      p.values[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
             double base_lr, double min_lr) {
  if (step > total_steps)
    throw std::invalid_argument("lr_at: step beyond total_steps");
  if (warmup_steps >= total_steps && total_steps > 0)
    throw std::invalid_argument("lr_at: warmup must be shorter than the schedule");
  if (step < warmup_steps)
    return base_lr * double(step) / double(warmup_steps);
  if (total_steps == warmup_steps) return base_lr;
  double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(M_PI * progress));
}

void TrainConfig::validate() const {
  if (min_lr > base_lr)
    throw std::invalid_argument("TrainConfig: min_lr > base_lr");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size == 0");
  if (few_shot_k && regime == TrainRegime::distill)
    throw std::invalid_argument("TrainConfig: few_shot_k only valid for probe regimes");
  if (few_shot_k && (*few_shot_k < 1 || *few_shot_k > 5))
    throw std::invalid_argument("TrainConfig: few_shot_k must be 1-5");
}

namespace {

constexpr char kCkptMagic[8] = {'Z', 'E', 'N', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(kCkptMagic, sizeof(kCkptMagic));
  write_raw<std::uint32_t>(f, c.version);
  write_raw<std::uint64_t>(f, c.config_hash);
  write_raw<std::uint64_t>(f, c.step);
  write_raw<std::uint64_t>(f, c.sections.size());
  for (const auto& [name, a] : c.sections) {
    write_raw<std::uint32_t>(f, std::uint32_t(name.size()));
    f.write(name.data(), std::streamsize(name.size()));
    write_array(f, a);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Checkpoint c;
  c.version = read_raw<std::uint32_t>(f);
  c.config_hash = read_raw<std::uint64_t>(f);
  c.step = read_raw<std::uint64_t>(f);
  auto n = read_raw<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto len = read_raw<std::uint32_t>(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    c.sections[name] = read_array(f);
  }
  return c;
}

std::uint64_t checkpoint_content_hash(const Checkpoint& c) {
  std::uint64_t h = hash_combine(c.config_hash, c.step);
  for (const auto& [name, a] : c.sections) {
    h = hash_combine(h, fnv1a64(name));
    h = hash_combine(h, fnv1a64(a.values.data(), a.values.size() * sizeof(double)));
  }
  return h;
}

DistillAssembly build_assembly(const ViTConfig& student_cfg,
                               std::vector<TeacherSpec> teachers,
                               const DistillConfig& distill, std::uint64_t seed) {
  student_cfg.validate();
  distill.validate();
  DistillAssembly a;
  a.student_cfg = student_cfg;
  a.student_params = init_vit_params(student_cfg, seed);
  a.teachers = std::move(teachers);
  a.distill = distill;
  std::uint64_t adaptor_seed = hash_combine(seed, 0x61646170ULL);
  std::size_t d_s = student_cfg.embed_dim;
  for (const auto& t : a.teachers) {
    std::vector<std::string> kinds =
        t.kind == TeacherKind::vision ? std::vector<std::string>{"cls", "patch"}
                                      : std::vector<std::string>{"pooled"};
    for (const auto& kind : kinds) {
      std::string key = t.id + "." + kind;
      AdaptorConfig ac{d_s, distill.adaptor_mid, t.output_dim};
      a.adaptor_params[key] = init_adaptor_params(ac, hash_combine(adaptor_seed,
                                                                   fnv1a64(key)));
      a.standardizers.emplace(key,
                              FeatureStandardizer(t.output_dim, distill.ema_momentum));
    }
  }
  return a;
}

Checkpoint assembly_checkpoint(const DistillAssembly& a, const OptimState& opt,
                               std::uint64_t config_hash, std::uint64_t step) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.step = step;
  for (const auto& [name, arr] : a.student_params)
    c.sections["student." + name] = arr;
  for (const auto& [key, ps] : a.adaptor_params)
    for (const auto& [name, arr] : ps) c.sections["adaptor." + key + "." + name] = arr;
  for (const auto& [key, s] : a.standardizers)
    c.sections["standardizer." + key] = s.state();
  for (const auto& [name, arr] : opt.m) c.sections["optim.m." + name] = arr;
  for (const auto& [name, arr] : opt.v) c.sections["optim.v." + name] = arr;
  c.sections["optim.t"] = Array({1}, {double(opt.t)});
  return c;
}

void restore_assembly(DistillAssembly& a, OptimState& opt, const Checkpoint& c) {
  for (auto& [name, arr] : a.student_params) arr = c.sections.at("student." + name);
  for (auto& [key, ps] : a.adaptor_params)
    for (auto& [name, arr] : ps) arr = c.sections.at("adaptor." + key + "." + name);
  for (auto& [key, s] : a.standardizers)
    s.load_state(c.sections.at("standardizer." + key));
  opt.m.clear();
  opt.v.clear();
  for (const auto& [name, arr] : c.sections) {
    if (name.rfind("optim.m.", 0) == 0) opt.m[name.substr(8)] = arr;
    if (name.rfind("optim.v.", 0) == 0) opt.v[name.substr(8)] = arr;
  }
  opt.t = std::size_t(c.sections.at("optim.t").values[0]);
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(hash_combine(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

DistillRunResult train_distill(const TrainConfig& cfg, const std::vector<Array>& images,
                               DistillAssembly& assembly, std::uint64_t config_hash) {
  cfg.validate();
  if (cfg.regime != TrainRegime::distill)
    throw std::invalid_argument("train_distill: regime must be distill");
  if (images.empty()) throw std::invalid_argument("train_distill: no images");

  // teacher outputs are pure functions of the image; compute once
  std::vector<std::vector<FeatureBundle>> teacher_feats;
  for (const auto& t : assembly.teachers)
    teacher_feats.push_back(teacher_forward(images, t));

  // flat trainable parameter map: student.* and adaptor.*
  std::map<std::string, Array> flat;
  for (const auto& [name, arr] : assembly.student_params) flat["student." + name] = arr;
  for (const auto& [key, ps] : assembly.adaptor_params)
    for (const auto& [name, arr] : ps) flat["adaptor." + key + "." + name] = arr;

  OptimState opt;
  opt.cfg.weight_decay = cfg.weight_decay;
  std::mt19937_64 mask_rng(hash_combine(cfg.seed, 0x6d61736bULL));

  std::size_t steps_per_epoch = (images.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total_steps = cfg.epochs * steps_per_epoch;
  std::size_t warmup_steps = std::size_t(cfg.warmup_epochs * double(steps_per_epoch));

  DistillRunResult res;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = epoch_order(images.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::size_t lo = b * cfg.batch_size;
      std::size_t hi = std::min(lo + cfg.batch_size, images.size());

      Tape tape;
      auto bound = bind_params(&tape, flat, true);
      std::map<std::string, Tensor> student_bound;
      for (const auto& [name, t] : bound)
        if (name.rfind("student.", 0) == 0) student_bound[name.substr(8)] = t;
      std::map<std::string, std::map<std::string, Tensor>> adaptor_bound;
      for (const auto& [key, ps] : assembly.adaptor_params) {
        std::string prefix = "adaptor." + key + ".";
        for (const auto& [name, arr] : ps)
          adaptor_bound[key][name] = bound.at(prefix + name);
      }

      std::vector<Array> batch;
      std::vector<std::pair<const TeacherSpec*, std::vector<FeatureBundle>>> tb;
      tb.resize(assembly.teachers.size());
      for (std::size_t ti = 0; ti < assembly.teachers.size(); ++ti)
        tb[ti].first = &assembly.teachers[ti];
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back(images[order[i]]);
        for (std::size_t ti = 0; ti < assembly.teachers.size(); ++ti)
          tb[ti].second.push_back(teacher_feats[ti][order[i]]);
      }

      auto student = student_forward(batch, assembly.student_cfg, student_bound);
      DistillOutput out = total_distill_loss(student, tb, adaptor_bound,
                                             assembly.standardizers, assembly.distill,
                                             mask_rng, /*training=*/true);
      if (!std::isfinite(out.report.total))
        throw std::runtime_error("train_distill: non-finite loss at step " +
                                 std::to_string(step));
      tape.backward(out.total);

      std::map<std::string, std::vector<double>> grads;
      for (const auto& [name, t] : bound) {
        std::vector<double> g = t.grad();
        if (g.empty()) g.assign(t.size(), 0.0);
        grads[name] = std::move(g);
      }
      opt.cfg.lr = lr_at(step, total_steps, warmup_steps, cfg.base_lr, cfg.min_lr);
      adamw_step(flat, grads, opt);

      out.report.step = step;
      res.log.push_back(out.report);
      ++step;
    }
  }

  // write updated parameters back into the assembly
  for (auto& [name, arr] : assembly.student_params) arr = flat.at("student." + name);
  for (auto& [key, ps] : assembly.adaptor_params)
    for (auto& [name, arr] : ps) arr = flat.at("adaptor." + key + "." + name);

  res.checkpoint = assembly_checkpoint(assembly, opt, config_hash, step);
  return res;
}

namespace {

struct ProbeSubset {
  std::vector<std::size_t> indices;
  std::size_t videos_used = 0;
};

ProbeSubset few_shot_select(const ProbeData& data, std::size_t k, std::uint64_t seed) {
  auto ids = data.manifest.video_ids();
  if (k > ids.size())
    throw std::invalid_argument("few_shot: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(ids.size()) + " available videos");
  std::mt19937_64 rng(hash_combine(seed, 0x66657773ULL));
  std::shuffle(ids.begin(), ids.end(), rng);
  std::set<std::string> chosen(ids.begin(), ids.begin() + long(k));
  ProbeSubset out;
  out.videos_used = k;
  for (std::size_t i = 0; i < data.manifest.records.size(); ++i)
    if (chosen.count(data.manifest.records[i].video_id)) out.indices.push_back(i);
  return out;
}

Array encode_frozen(const Array& image, const ViTConfig& cfg,
                    const std::map<std::string, Tensor>& bound) {
  FeatureBundle fb = vit_forward(image, cfg, bound);
  return fb.cls.to_array();
}

}  // namespace

ProbeResult train_probe(const TrainConfig& cfg, const ViTConfig& encoder_cfg,
                        const ParamSet& encoder_params, const ProbeData& train_data,
                        const ProbeData& test_data, std::size_t classes) {
  cfg.validate();
  if (cfg.regime == TrainRegime::distill)
    throw std::invalid_argument("train_probe: regime must be a probe regime");
  bool finetune = cfg.regime == TrainRegime::probe_finetune;
  bool multilabel = !train_data.multilabels.empty();

  std::vector<std::size_t> train_idx(train_data.images.size());
  std::iota(train_idx.begin(), train_idx.end(), 0);
  if (cfg.few_shot_k) {
    ProbeSubset sub = few_shot_select(train_data, *cfg.few_shot_k, cfg.seed);
    train_idx = sub.indices;
  }
  if (train_idx.empty()) throw std::invalid_argument("train_probe: empty training set");

  std::size_t d = encoder_cfg.embed_dim;
  ParamSet classifier;
  {
    std::mt19937_64 rng(hash_combine(cfg.seed, 0x70726f62ULL));
    std::normal_distribution<double> dist(0.0, 0.02);
    classifier["w"] = Array::zeros({d, classes});
    for (auto& v : classifier["w"].values) v = dist(rng);
    classifier["b"] = Array::zeros({classes});
  }

  ParamSet encoder = encoder_params;

  // frozen regime: features are fixed, so extract once
  std::vector<Array> frozen_train, frozen_test;
  if (!finetune) {
    auto bound = bind_params(nullptr, encoder, false);
    for (std::size_t i : train_idx)
      frozen_train.push_back(encode_frozen(train_data.images[i], encoder_cfg, bound));
    for (const auto& im : test_data.images)
      frozen_test.push_back(encode_frozen(im, encoder_cfg, bound));
  }

  std::map<std::string, Array> flat;
  for (const auto& [name, arr] : classifier) flat["probe." + name] = arr;
  if (finetune)
    for (const auto& [name, arr] : encoder) flat["encoder." + name] = arr;

  OptimState opt;
  opt.cfg.weight_decay = cfg.weight_decay;

  std::size_t n = train_idx.size();
  std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total_steps = cfg.epochs * steps_per_epoch;
  std::size_t warmup_steps = std::size_t(cfg.warmup_epochs * double(steps_per_epoch));

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = epoch_order(n, cfg.seed, epoch);
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::size_t lo = b * cfg.batch_size;
      std::size_t hi = std::min(lo + cfg.batch_size, n);

      Tape tape;
      auto bound = bind_params(&tape, flat, true);
      std::map<std::string, Tensor> enc_bound;
      if (finetune)
        for (const auto& [name, t] : bound)
          if (name.rfind("encoder.", 0) == 0) enc_bound[name.substr(8)] = t;

      // assemble the feature matrix for this batch
      Tensor feats;
      std::vector<int> batch_labels;
      std::vector<double> batch_targets;
      for (std::size_t i = lo; i < hi; ++i) {
        std::size_t local = order[i];
        std::size_t global = train_idx[local];
        Tensor row;
        if (finetune) {
          FeatureBundle fb =
              vit_forward(train_data.images[global], encoder_cfg, enc_bound);
          row = reshape(fb.cls, {1, d});
        } else {
          row = Tensor::constant({1, d}, frozen_train[local].values);
        }
        feats = feats.defined() ? concat_rows(feats, row) : row;
        if (multilabel)
          for (int v : train_data.multilabels[global])
            batch_targets.push_back(double(v));
        else
          batch_labels.push_back(train_data.labels[global]);
      }

      Tensor logits =
          add_rowvec(matmul(feats, bound.at("probe.w")), bound.at("probe.b"));
      Tensor loss =
          multilabel
              ? bce_with_logits(logits, Tensor::constant({hi - lo, classes},
                                                         batch_targets))
              : softmax_cross_entropy(logits, batch_labels);
      tape.backward(loss);

      std::map<std::string, std::vector<double>> grads;
      for (const auto& [name, t] : bound) {
        std::vector<double> g = t.grad();
        if (g.empty()) g.assign(t.size(), 0.0);
        grads[name] = std::move(g);
      }
      opt.cfg.lr = lr_at(step, total_steps, warmup_steps, cfg.base_lr, cfg.min_lr);
      adamw_step(flat, grads, opt);
      ++step;
    }
  }

  for (auto& [name, arr] : classifier) arr = flat.at("probe." + name);
  if (finetune)
    for (auto& [name, arr] : encoder) arr = flat.at("encoder." + name);

  // evaluate on train + test
  auto predict = [&](const std::vector<Array>& images,
                     const std::vector<Array>* cached) {
    std::vector<int> preds;
    auto enc_bound = bind_params(nullptr, encoder, false);
    auto cls_w = Tensor::constant(classifier.at("w"));
    auto cls_b = Tensor::constant(classifier.at("b"));
    for (std::size_t i = 0; i < images.size(); ++i) {
      Tensor row = cached ? Tensor::constant({1, d}, (*cached)[i].values)
                          : reshape(vit_forward(images[i], encoder_cfg, enc_bound).cls,
                                    {1, d});
      Tensor logits = add_rowvec(matmul(row, cls_w), cls_b);
      const auto& v = logits.values();
      preds.push_back(int(std::max_element(v.begin(), v.end()) - v.begin()));
    }
    return preds;
  };

  ProbeResult res;
  res.classifier = classifier;
  res.encoder_params = encoder;
  res.train_frames = train_idx.size();

  if (!multilabel) {
    std::vector<Array> train_images;
    std::vector<int> train_labels;
    for (std::size_t i : train_idx) {
      train_images.push_back(train_data.images[i]);
      train_labels.push_back(train_data.labels[i]);
    }
    auto train_pred =
        predict(train_images, finetune ? nullptr : &frozen_train);
    auto test_pred = predict(test_data.images, finetune ? nullptr : &frozen_test);

    auto accuracy = [](const std::vector<int>& p, const std::vector<int>& g) {
      if (p.empty()) return 0.0;
      long long ok = 0;
      for (std::size_t i = 0; i < p.size(); ++i) ok += p[i] == g[i];
      return double(ok) / double(p.size());
    };
    res.report.metrics["train_accuracy"] = accuracy(train_pred, train_labels);
    if (!test_data.images.empty())
      res.report.metrics["test_accuracy"] = accuracy(test_pred, test_data.labels);
  }
  res.report.diagnostics["train_frames"] = res.train_frames;
  res.report.diagnostics["regime"] = finetune ? "probe-finetune" : "probe-frozen";
  return res;
}

}  // namespace zen
