// Command-line driver: distill / grad-check / eval / stats / data-gen.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "zen/data.hpp"
#include "zen/distill.hpp"
#include "zen/encoders.hpp"
#include "zen/metrics.hpp"
#include "zen/serialize.hpp"
#include "zen/stats.hpp"
#include "zen/tensor.hpp"
#include "zen/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace zen;

namespace {

constexpr int kArtifactVersion = 1;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return j;
}

// strict: every key must be known, a misspelling is an error not a default
void check_keys(const json& obj, const std::string& section,
                const std::vector<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("section \"" + section + "\" must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError("unknown key \"" + it.key() + "\" in section \"" + section +
                        "\"");
  }
}

std::uint64_t config_hash_of(const json& j) { return fnv1a64(j.dump()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
  return buf;
}

ViTConfig parse_model(const json& j) {
  check_keys(j, "model", {"preset", "image_size", "patch_size", "channels",
                          "embed_dim", "depth", "heads", "mlp_ratio"});
  ViTConfig cfg = j.count("preset") ? vit_preset(j.at("preset").get<std::string>())
                                    : ViTConfig{};
  if (j.count("image_size")) cfg.image_size = j.at("image_size").get<std::size_t>();
  if (j.count("patch_size")) cfg.patch_size = j.at("patch_size").get<std::size_t>();
  if (j.count("channels")) cfg.channels = j.at("channels").get<std::size_t>();
  if (j.count("embed_dim")) cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
  if (j.count("depth")) cfg.depth = j.at("depth").get<std::size_t>();
  if (j.count("heads")) cfg.heads = j.at("heads").get<std::size_t>();
  if (j.count("mlp_ratio")) cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
  cfg.validate();
  return cfg;
}

DistillConfig parse_distill(const json& j) {
  check_keys(j, "distill", {"alpha", "beta", "p_drop", "ema_momentum",
                            "smooth_l1_delta", "adaptor_mid"});
  DistillConfig cfg;
  if (j.count("alpha")) cfg.alpha = j.at("alpha").get<double>();
  if (j.count("beta")) cfg.beta = j.at("beta").get<double>();
  if (j.count("p_drop")) cfg.p_drop = j.at("p_drop").get<double>();
  if (j.count("ema_momentum")) cfg.ema_momentum = j.at("ema_momentum").get<double>();
  if (j.count("smooth_l1_delta"))
    cfg.smooth_l1_delta = j.at("smooth_l1_delta").get<double>();
  if (j.count("adaptor_mid")) cfg.adaptor_mid = j.at("adaptor_mid").get<std::size_t>();
  cfg.validate();
  return cfg;
}

TrainConfig parse_train(const json& j) {
  check_keys(j, "train", {"epochs", "batch_size", "base_lr", "min_lr",
                          "warmup_epochs", "seed", "regime", "few_shot_k",
                          "weight_decay"});
  TrainConfig cfg;
  if (j.count("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
  if (j.count("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.count("base_lr")) cfg.base_lr = j.at("base_lr").get<double>();
  if (j.count("min_lr")) cfg.min_lr = j.at("min_lr").get<double>();
  if (j.count("warmup_epochs")) cfg.warmup_epochs = j.at("warmup_epochs").get<double>();
  if (j.count("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.count("few_shot_k")) cfg.few_shot_k = j.at("few_shot_k").get<std::size_t>();
  if (j.count("regime")) {
    std::string r = j.at("regime").get<std::string>();
    if (r == "distill") cfg.regime = TrainRegime::distill;
    else if (r == "probe-frozen") cfg.regime = TrainRegime::probe_frozen;
    else if (r == "probe-finetune") cfg.regime = TrainRegime::probe_finetune;
    else throw ConfigError("train.regime: unknown regime \"" + r + "\"");
  }
  if (j.count("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.validate();
  return cfg;
}

SyntheticSpec parse_synth(const json& j, const std::string& section) {
  check_keys(j, section, {"seed", "channels", "height", "width", "classes",
                          "frames_per_video", "recipe", "n"});
  SyntheticSpec s;
  if (j.count("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.count("channels")) s.channels = j.at("channels").get<std::size_t>();
  if (j.count("height")) s.height = j.at("height").get<std::size_t>();
  if (j.count("width")) s.width = j.at("width").get<std::size_t>();
  if (j.count("classes")) s.classes = j.at("classes").get<std::size_t>();
  if (j.count("frames_per_video"))
    s.frames_per_video = j.at("frames_per_video").get<std::size_t>();
  if (j.count("recipe")) s.recipe = j.at("recipe").get<std::string>();
  return s;
}

std::vector<TeacherSpec> parse_teachers(const json& j) {
  if (!j.is_array() || j.empty())
    throw ConfigError("teachers: need a non-empty array");
  std::vector<TeacherSpec> out;
  for (const auto& t : j) {
    check_keys(t, "teachers[]", {"id", "kind", "seed", "preset", "image_size",
                                 "patch_size", "channels", "hidden_dim", "output_dim"});
    std::string id = t.at("id").get<std::string>();
    std::string kind = t.at("kind").get<std::string>();
    std::uint64_t seed = t.count("seed") ? t.at("seed").get<std::uint64_t>() : 0;
    if (kind == "vision") {
      ViTConfig cfg = t.count("preset") ? vit_preset(t.at("preset").get<std::string>())
                                        : vit_preset("toy");
      if (t.count("image_size")) cfg.image_size = t.at("image_size").get<std::size_t>();
      if (t.count("patch_size")) cfg.patch_size = t.at("patch_size").get<std::size_t>();
      if (t.count("channels")) cfg.channels = t.at("channels").get<std::size_t>();
      out.push_back(make_vision_teacher(id, cfg, seed));
    } else if (kind == "vision-language") {
      VlTeacherConfig cfg;
      if (t.count("image_size")) cfg.image_size = t.at("image_size").get<std::size_t>();
      if (t.count("patch_size")) cfg.patch_size = t.at("patch_size").get<std::size_t>();
      if (t.count("channels")) cfg.channels = t.at("channels").get<std::size_t>();
      if (t.count("hidden_dim")) cfg.hidden_dim = t.at("hidden_dim").get<std::size_t>();
      if (t.count("output_dim")) cfg.output_dim = t.at("output_dim").get<std::size_t>();
      out.push_back(make_vl_teacher(id, cfg, seed));
    } else {
      throw ConfigError("teachers[].kind: unknown kind \"" + kind + "\"");
    }
  }
  return out;
}

// ---- distill -------------------------------------------------------------

int cmd_distill(const std::string& config_path, const std::string& out_dir) {
  json cfg = load_json(config_path);
  check_keys(cfg, "<root>", {"model", "distill", "train", "data", "teachers"});
  ViTConfig model = parse_model(cfg.value("model", json::object()));
  DistillConfig distill = parse_distill(cfg.value("distill", json::object()));
  TrainConfig train = parse_train(cfg.value("train", json::object()));
  if (train.regime != TrainRegime::distill)
    throw ConfigError("train.regime: distill command requires regime \"distill\"");
  json data_j = cfg.value("data", json::object());
  SyntheticSpec synth = parse_synth(data_j, "data");
  std::size_t n = data_j.value("n", std::size_t(8));
  auto teachers = parse_teachers(cfg.value("teachers", json::array()));

  std::uint64_t hash = config_hash_of(cfg);
  fs::path dir = fs::path(out_dir) / hex64(hash);
  fs::create_directories(dir);

  SyntheticDataset ds = generate_synthetic(synth, n);
  DistillAssembly assembly = build_assembly(model, std::move(teachers), distill,
                                            train.seed);
  DistillRunResult res = train_distill(train, ds.images, assembly, hash);

  save_checkpoint((dir / "checkpoint.bin").string(), res.checkpoint);
  {
    std::ofstream log(dir / "log.jsonl");
    for (const auto& r : res.log) log << r.to_json().dump() << "\n";
  }
  {
    json run = {{"version", kArtifactVersion},
                {"config_hash", hex64(hash)},
                {"steps", res.log.size()},
                {"final_loss", res.log.empty() ? 0.0 : res.log.back().total}};
    std::ofstream rf(dir / "run.json");
    rf << run.dump(2) << "\n";
  }
  std::cout << "wrote " << (dir / "checkpoint.bin").string() << " ("
            << res.log.size() << " steps, config " << hex64(hash) << ")\n";
  return 0;
}

// ---- grad-check ----------------------------------------------------------

int cmd_grad_check(const std::string& config_path) {
  json cfg = load_json(config_path);
  check_keys(cfg, "<root>",
             {"model", "distill", "data", "teachers", "batch", "h", "seed",
              "inject_wrong_gradient"});
  ViTConfig model = cfg.count("model") ? parse_model(cfg.at("model"))
                                       : vit_preset("toy-grad-check");
  DistillConfig distill = cfg.count("distill") ? parse_distill(cfg.at("distill"))
                                               : DistillConfig{};
  distill.p_drop = 0.0;  // fixed masks keep the objective deterministic
  std::uint64_t seed = cfg.value("seed", std::uint64_t(7));
  std::size_t batch = cfg.value("batch", std::size_t(2));
  double h = cfg.value("h", 1e-5);
  bool inject = cfg.value("inject_wrong_gradient", false);

  std::vector<TeacherSpec> teachers;
  if (cfg.count("teachers")) {
    teachers = parse_teachers(cfg.at("teachers"));
  } else {
    ViTConfig tv = model;
    teachers.push_back(make_vision_teacher("vision", tv, seed + 1));
    VlTeacherConfig vl;
    vl.image_size = model.image_size;
    vl.patch_size = model.patch_size;
    vl.channels = model.channels;
    vl.hidden_dim = 12;
    vl.output_dim = 8;
    teachers.push_back(make_vl_teacher("vl", vl, seed + 2));
  }

  DistillConfig small = distill;
  if (!cfg.count("distill")) small.adaptor_mid = 8;
  DistillAssembly assembly = build_assembly(model, std::move(teachers), small, seed);

  std::size_t n_params = 0;
  for (const auto& [k, a] : assembly.student_params) n_params += a.size();
  for (const auto& [k, ps] : assembly.adaptor_params)
    for (const auto& [k2, a] : ps) n_params += a.size();
  constexpr std::size_t kLimit = 10000;
  if (n_params > kLimit) {
    std::cerr << "grad-check: " << n_params << " parameters exceeds the limit of "
              << kLimit << "; use a smaller preset\n";
    return 2;
  }

  SyntheticSpec synth;
  synth.seed = seed;
  synth.channels = model.channels;
  synth.height = model.image_size;
  synth.width = model.image_size;
  SyntheticDataset ds = generate_synthetic(synth, batch);

  std::vector<std::vector<FeatureBundle>> tf;
  for (const auto& t : assembly.teachers) tf.push_back(teacher_forward(ds.images, t));

  // seed the running statistics once, then freeze them for the check
  {
    std::mt19937_64 rng(seed);
    Tape warm;
    std::map<std::string, Array> flat;
    for (const auto& [name, a] : assembly.student_params) flat["s." + name] = a;
    auto bound = bind_params(&warm, flat, true);
    std::map<std::string, Tensor> sb;
    for (const auto& [name, t] : bound) sb[name.substr(2)] = t;
    auto student = student_forward(ds.images, assembly.student_cfg, sb);
    std::map<std::string, std::map<std::string, Tensor>> ab;
    for (const auto& [key, ps] : assembly.adaptor_params)
      for (const auto& [name, a] : ps) ab[key][name] = Tensor::constant(a);
    std::vector<std::pair<const TeacherSpec*, std::vector<FeatureBundle>>> tb;
    for (std::size_t i = 0; i < assembly.teachers.size(); ++i)
      tb.emplace_back(&assembly.teachers[i], tf[i]);
    total_distill_loss(student, tb, ab, assembly.standardizers, small, rng, true);
  }

  std::vector<std::string> names;
  std::vector<Array> params;
  for (const auto& [name, a] : assembly.student_params) {
    names.push_back("student." + name);
    params.push_back(a);
  }
  for (const auto& [key, ps] : assembly.adaptor_params)
    for (const auto& [name, a] : ps) {
      names.push_back("adaptor." + key + "." + name);
      params.push_back(a);
    }

  auto f = [&](Tape& tape, const std::vector<Tensor>& leaves) -> Tensor {
    std::map<std::string, Tensor> sb;
    std::map<std::string, std::map<std::string, Tensor>> ab;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string& n = names[i];
      if (n.rfind("student.", 0) == 0) {
        sb[n.substr(8)] = leaves[i];
      } else {
        // "<teacher>.<kind>.<param>"; param names may themselves contain dots
        std::string rest = n.substr(8);
        std::size_t cut = rest.find('.', rest.find('.') + 1);
        ab[rest.substr(0, cut)][rest.substr(cut + 1)] = leaves[i];
      }
    }
    auto student = student_forward(ds.images, assembly.student_cfg, sb);
    std::vector<std::pair<const TeacherSpec*, std::vector<FeatureBundle>>> tb;
    for (std::size_t i = 0; i < assembly.teachers.size(); ++i)
      tb.emplace_back(&assembly.teachers[i], tf[i]);
    std::mt19937_64 rng(seed);
    DistillOutput out =
        total_distill_loss(student, tb, ab, assembly.standardizers, small, rng,
                           /*training=*/false);
    if (!inject) return out.total;
    // negative control: a detached copy of a parameter leaks into the loss, so
    // finite differences see it but the reverse pass does not
    Tensor leak = Tensor::constant(leaves[0].shape(), leaves[0].values());
    return add(out.total, scale(mean_all(leak), 0.1));
  };

  GradCheckReport rep = finite_diff_check(f, params, h);
  std::cout << "parameters: " << n_params << " across " << names.size()
            << " groups\n";
  for (std::size_t i = 0; i < names.size(); ++i)
    std::cout << "  " << names[i] << ": worst rel err " << std::scientific
              << std::setprecision(3) << rep.per_param_err[i] << "\n";
  std::cout << "max relative error: " << std::scientific << std::setprecision(6)
            << rep.max_rel_err << " (group " << names[rep.worst_param] << ", coord "
            << rep.worst_coord << ")\n";
  constexpr double kTol = 1e-4;
  bool ok = rep.max_rel_err < kTol;
  std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << kTol << ")\n";
  return ok ? 0 : 1;
}

// ---- eval ----------------------------------------------------------------

std::vector<json> load_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

const json& field(const json& j, const std::string& path, std::size_t lineno,
                  const char* name) {
  if (!j.contains(name))
    throw ConfigError(path + ":" + std::to_string(lineno) + ": missing field \"" +
                      name + "\"");
  return j.at(name);
}

MetricReport eval_phase(const std::string& pred_path, const std::string& gt_path) {
  auto preds = load_jsonl(pred_path);
  auto gts = load_jsonl(gt_path);
  if (preds.size() != gts.size())
    throw ConfigError("phase: prediction and ground-truth video counts differ");
  PhaseSequences seqs;
  int classes = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    PhaseVideo v;
    v.id = field(gts[i], gt_path, i + 1, "video_id").get<std::string>();
    v.pred = field(preds[i], pred_path, i + 1, "labels").get<std::vector<int>>();
    v.gt = field(gts[i], gt_path, i + 1, "labels").get<std::vector<int>>();
    for (int c : v.pred) classes = std::max(classes, c + 1);
    for (int c : v.gt) classes = std::max(classes, c + 1);
    seqs.videos.push_back(std::move(v));
  }
  seqs.classes = classes;
  return phase_metrics(seqs);
}

MetricReport eval_triplet(const std::string& pred_path, const std::string& gt_path) {
  auto preds = load_jsonl(pred_path);
  auto gts = load_jsonl(gt_path);
  MultiLabelScores s;
  std::size_t start = 0;
  if (!gts.empty() && gts[0].contains("maps")) {
    const json& m = gts[0].at("maps");
    TripletComponentMaps maps;
    maps.instrument = field(m, gt_path, 1, "instrument").get<std::vector<int>>();
    maps.verb = field(m, gt_path, 1, "verb").get<std::vector<int>>();
    maps.target = field(m, gt_path, 1, "target").get<std::vector<int>>();
    s.maps = maps;
    start = 1;
  }
  if (preds.size() != gts.size() - start)
    throw ConfigError("triplet: instance counts differ between pred and gt");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    s.scores.push_back(
        field(preds[i], pred_path, i + 1, "scores").get<std::vector<double>>());
    s.labels.push_back(field(gts[i + start], gt_path, i + start + 1, "labels")
                           .get<std::vector<int>>());
  }
  return triplet_map(s);
}

MetricReport eval_seg(const std::string& pred_path, const std::string& gt_path) {
  auto preds = load_jsonl(pred_path);
  auto gts = load_jsonl(gt_path);
  if (preds.size() != gts.size())
    throw ConfigError("seg: prediction and ground-truth image counts differ");
  std::map<std::string, double> acc;
  std::map<std::string, int> cnt;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    MaskPair m;
    m.height = field(gts[i], gt_path, i + 1, "height").get<std::size_t>();
    m.width = field(gts[i], gt_path, i + 1, "width").get<std::size_t>();
    m.pred = field(preds[i], pred_path, i + 1, "labels").get<std::vector<int>>();
    m.gt = field(gts[i], gt_path, i + 1, "labels").get<std::vector<int>>();
    int classes = 0;
    for (int c : m.pred) classes = std::max(classes, c + 1);
    for (int c : m.gt) classes = std::max(classes, c + 1);
    m.classes = classes;
    MetricReport r = dice_hd95(m);
    for (const auto& [k, v] : r.metrics) {
      acc[k] += v;
      cnt[k] += 1;
    }
  }
  MetricReport out;
  for (const auto& [k, v] : acc) out.metrics[k] = v / double(cnt[k]);
  out.diagnostics["images"] = preds.size();
  return out;
}

MetricReport eval_instance(const std::string& pred_path, const std::string& gt_path) {
  auto preds = load_jsonl(pred_path);
  auto gts = load_jsonl(gt_path);
  if (preds.size() != gts.size())
    throw ConfigError("instance: prediction and ground-truth image counts differ");
  std::vector<InstanceSet> sets;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    InstanceSet set;
    set.height = gts[i].value("height", std::size_t(0));
    set.width = gts[i].value("width", std::size_t(0));
    for (const auto& p : field(preds[i], pred_path, i + 1, "instances")) {
      InstancePred ip;
      ip.cls = field(p, pred_path, i + 1, "cls").get<int>();
      ip.score = field(p, pred_path, i + 1, "score").get<double>();
      auto b = field(p, pred_path, i + 1, "box").get<std::vector<double>>();
      if (b.size() != 4)
        throw ConfigError(pred_path + ":" + std::to_string(i + 1) +
                          ": box needs 4 values");
      std::copy(b.begin(), b.end(), ip.box.begin());
      if (p.contains("mask"))
        ip.mask = p.at("mask").get<std::vector<std::uint8_t>>();
      set.preds.push_back(std::move(ip));
    }
    for (const auto& g : field(gts[i], gt_path, i + 1, "instances")) {
      InstanceGt ig;
      ig.cls = field(g, gt_path, i + 1, "cls").get<int>();
      auto b = field(g, gt_path, i + 1, "box").get<std::vector<double>>();
      if (b.size() != 4)
        throw ConfigError(gt_path + ":" + std::to_string(i + 1) +
                          ": box needs 4 values");
      std::copy(b.begin(), b.end(), ig.box.begin());
      if (g.contains("mask"))
        ig.mask = g.at("mask").get<std::vector<std::uint8_t>>();
      set.gts.push_back(std::move(ig));
    }
    sets.push_back(std::move(set));
  }
  return instance_map(sets);
}

MetricReport eval_depth(const std::string& pred_path, const std::string& gt_path) {
  auto preds = load_jsonl(pred_path);
  auto gts = load_jsonl(gt_path);
  if (preds.size() != gts.size())
    throw ConfigError("depth: prediction and ground-truth image counts differ");
  std::map<std::string, double> acc;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    DepthPair d;
    d.pred = field(preds[i], pred_path, i + 1, "depth").get<std::vector<double>>();
    d.gt = field(gts[i], gt_path, i + 1, "depth").get<std::vector<double>>();
    d.valid = gts[i].contains("valid")
                  ? gts[i].at("valid").get<std::vector<std::uint8_t>>()
                  : std::vector<std::uint8_t>(d.gt.size(), 1);
    MetricReport r = depth_metrics(d);
    for (const auto& [k, v] : r.metrics) acc[k] += v;
  }
  MetricReport out;
  for (const auto& [k, v] : acc) out.metrics[k] = v / double(preds.size());
  out.diagnostics["images"] = preds.size();
  return out;
}

MetricReport eval_text(const std::string& pred_path, const std::string& gt_path) {
  auto preds = load_jsonl(pred_path);
  auto gts = load_jsonl(gt_path);
  if (preds.size() != gts.size())
    throw ConfigError("text: candidate and reference counts differ");
  std::vector<std::string> cands, refs;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cands.push_back(field(preds[i], pred_path, i + 1, "text").get<std::string>());
    refs.push_back(field(gts[i], gt_path, i + 1, "text").get<std::string>());
  }
  return text_gen_metrics(cands, refs);
}

MetricReport eval_retrieval(const std::string& pred_path, const std::string& gt_path) {
  auto preds = load_jsonl(pred_path);
  auto gts = load_jsonl(gt_path);
  if (preds.size() != gts.size())
    throw ConfigError("retrieval: query counts differ between pred and gt");
  RetrievalMatrix r;
  r.queries = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto row = field(preds[i], pred_path, i + 1, "sim").get<std::vector<double>>();
    if (i == 0) r.gallery = row.size();
    if (row.size() != r.gallery)
      throw ConfigError(pred_path + ":" + std::to_string(i + 1) +
                        ": ragged similarity row");
    r.sim.insert(r.sim.end(), row.begin(), row.end());
    r.match.push_back(field(gts[i], gt_path, i + 1, "match").get<std::size_t>());
  }
  return recall_at_k(r, {1, 5, 10});
}

MetricReport eval_zeroshot(const std::string& pred_path, const std::string& gt_path) {
  json pj = load_json(pred_path);
  json gj = load_json(gt_path);
  Array image_embs = array_from_json(field(pj, pred_path, 1, "image_embs"));
  Array class_embs = array_from_json(field(gj, gt_path, 1, "class_embs"));
  auto labels = field(gj, gt_path, 1, "labels").get<std::vector<int>>();
  auto preds = zero_shot_classify(image_embs, class_embs);
  if (preds.size() != labels.size())
    throw ConfigError("zeroshot: label count does not match image count");
  long long ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == labels[i];
  MetricReport out;
  out.metrics["accuracy"] = preds.empty() ? 0.0 : double(ok) / double(preds.size());
  out.diagnostics["images"] = preds.size();
  return out;
}

int cmd_eval(const std::string& task, const std::string& pred,
             const std::string& gt) {
  MetricReport rep;
  if (task == "phase") rep = eval_phase(pred, gt);
  else if (task == "triplet") rep = eval_triplet(pred, gt);
  else if (task == "seg") rep = eval_seg(pred, gt);
  else if (task == "instance") rep = eval_instance(pred, gt);
  else if (task == "depth") rep = eval_depth(pred, gt);
  else if (task == "text") rep = eval_text(pred, gt);
  else if (task == "retrieval") rep = eval_retrieval(pred, gt);
  else if (task == "zeroshot") rep = eval_zeroshot(pred, gt);
  else throw ConfigError("eval: unknown task \"" + task + "\"");
  json out = rep.to_json();
  out["version"] = kArtifactVersion;
  out["task"] = task;
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---- stats ---------------------------------------------------------------

int cmd_stats(const std::string& table_path, const std::string& config_path,
              const std::string& out_dir) {
  json cfg = load_json(config_path);
  check_keys(cfg, "<root>", {"directions", "compare"});
  RunTable table = RunTable::from_csv(table_path);
  std::map<std::string, TaskDirection> dirs;
  for (auto it = cfg.at("directions").begin(); it != cfg.at("directions").end(); ++it) {
    std::string d = it.value().get<std::string>();
    if (d == "higher") dirs[it.key()] = TaskDirection::higher_better;
    else if (d == "lower") dirs[it.key()] = TaskDirection::lower_better;
    else throw ConfigError("directions." + it.key() + ": use \"higher\" or \"lower\"");
  }
  std::uint64_t hash = config_hash_of(cfg);

  json report = {{"version", kArtifactVersion}, {"config_hash", hex64(hash)}};
  for (const auto& model : table.models)
    for (const auto& task : table.tasks) {
      const auto& runs = table.values.at(model).at(task);
      RunSummary s = summarize(runs);
      report["summary"][model][task] = {{"mean", s.mean},
                                        {"std", s.std_dev},
                                        {"se", s.se},
                                        {"ci95", s.ci95},
                                        {"runs", runs.size()}};
    }

  std::vector<std::pair<std::string, std::string>> pairs;
  if (cfg.count("compare")) {
    for (const auto& p : cfg.at("compare"))
      pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  } else {
    for (std::size_t i = 0; i < table.models.size(); ++i)
      for (std::size_t j = i + 1; j < table.models.size(); ++j)
        pairs.emplace_back(table.models[i], table.models[j]);
  }
  for (const auto& [a, b] : pairs)
    for (const auto& task : table.tasks) {
      const auto& ra = table.values.at(a).at(task);
      const auto& rb = table.values.at(b).at(task);
      if (ra.size() != rb.size())
        throw ConfigError("stats: unequal run counts for " + a + " vs " + b +
                          " on task " + task);
      TestResult t = paired_t_test(ra, rb);
      TestResult w = wilcoxon_signed_rank(ra, rb);
      report["tests"][a + " vs " + b][task] = {
          {"t_statistic", t.statistic},
          {"t_p", t.p_value},
          {"t_degenerate", t.degenerate},
          {"wilcoxon_statistic", w.statistic},
          {"wilcoxon_p", w.p_value},
          {"wilcoxon_exact", w.exact}};
    }

  MeanRankResult mr = mean_rank(table, dirs);
  for (const auto& [model, r] : mr.mean_rank) report["mean_rank"][model] = r;

  fs::create_directories(out_dir);
  fs::path rank_csv = fs::path(out_dir) / "ranks.csv";
  {
    std::ofstream f(rank_csv);
    f << "model,task,rank\n";
    for (const auto& model : table.models) {
      for (const auto& task : table.tasks)
        f << model << "," << task << "," << mr.rank.at(model).at(task) << "\n";
      f << model << ",mean," << mr.mean_rank.at(model) << "\n";
    }
  }
  report["rank_csv"] = rank_csv.string();
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- data-gen ------------------------------------------------------------

int cmd_data_gen(const std::string& spec_path, const std::string& out_dir) {
  json spec_j = load_json(spec_path);
  SyntheticSpec spec = parse_synth(spec_j, "<root>");
  std::size_t n = spec_j.value("n", std::size_t(16));
  std::uint64_t hash = config_hash_of(spec_j);

  SyntheticDataset ds = generate_synthetic(spec, n);
  fs::path dir = fs::path(out_dir) / hex64(hash);
  fs::create_directories(dir / "frames");
  FrameManifest manifest = ds.manifest;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    std::string rel = "frames/" + std::to_string(i) + ".bin";
    save_array((dir / rel).string(), ds.images[i]);
    manifest.records[i].frame_path = rel;
  }
  save_manifest((dir / "manifest.csv").string(), manifest);
  {
    json meta = {{"version", kArtifactVersion},
                 {"config_hash", hex64(hash)},
                 {"frames", ds.images.size()},
                 {"videos", manifest.video_ids().size()}};
    std::ofstream mf(dir / "meta.json");
    mf << meta.dump(2) << "\n";
  }
  std::cout << "wrote " << ds.images.size() << " frames under " << dir.string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-teacher feature distillation toolkit"};
  app.require_subcommand(1);

  std::string config, out = "out", task, pred, gt, table, spec;

  auto* distill = app.add_subcommand("distill", "run feature distillation");
  distill->add_option("--config", config)->required();
  distill->add_option("--out", out);

  auto* gradcheck = app.add_subcommand("grad-check", "verify gradients numerically");
  gradcheck->add_option("--config", config)->required();

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  eval->add_option("--task", task)->required();
  eval->add_option("--pred", pred)->required();
  eval->add_option("--gt", gt)->required();

  auto* stats = app.add_subcommand("stats", "summaries, tests and mean ranks");
  stats->add_option("--table", table)->required();
  stats->add_option("--config", config)->required();
  stats->add_option("--out", out);

  auto* datagen = app.add_subcommand("data-gen", "generate a synthetic frame corpus");
  datagen->add_option("--spec", spec)->required();
  datagen->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (distill->parsed()) return cmd_distill(config, out);
    if (gradcheck->parsed()) return cmd_grad_check(config);
    if (eval->parsed()) return cmd_eval(task, pred, gt);
    if (stats->parsed()) return cmd_stats(table, config, out);
    if (datagen->parsed()) return cmd_data_gen(spec, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
