#include "zen/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace zen {

double MetricReport::at(const std::string& name) const {
  auto it = metrics.find(name);
  if (it == metrics.end())
    throw std::out_of_range("MetricReport: no metric named " + name);
  return it->second;
}

nlohmann::json MetricReport::to_json() const {
  return {{"metrics", metrics}, {"diagnostics", diagnostics}};
}

// ---- phase metrics ------------------------------------------------------

MetricReport phase_metrics(const PhaseSequences& seqs) {
  if (seqs.videos.empty())
    throw std::invalid_argument("phase_metrics: no videos");
  int C = seqs.classes;
  MetricReport rep;
  std::vector<std::string> skipped;

  double sum_acc = 0.0, sum_f1 = 0.0;
  std::size_t used_videos = 0;
  // pooled frame counts per phase
  std::vector<long long> tp(C, 0), fp(C, 0), fn(C, 0);

  for (const auto& v : seqs.videos) {
    if (v.pred.size() != v.gt.size())
      throw std::invalid_argument("phase_metrics: pred/gt length mismatch in video " +
                                  v.id);
    if (v.gt.empty()) {
      skipped.push_back(v.id);
      continue;
    }
    std::vector<long long> vtp(C, 0), vfp(C, 0), vfn(C, 0);
    long long correct = 0;
    for (std::size_t i = 0; i < v.gt.size(); ++i) {
      int p = v.pred[i], g = v.gt[i];
      if (p < 0 || p >= C || g < 0 || g >= C)
        throw std::out_of_range("phase_metrics: phase id out of range in video " + v.id);
      if (p == g) {
        ++correct;
        ++vtp[p];
        ++tp[p];
      } else {
        ++vfp[p];
        ++vfn[g];
        ++fp[p];
        ++fn[g];
      }
    }
    sum_acc += double(correct) / double(v.gt.size());
    // macro F1 over phases present in this video's ground truth
    double f1_sum = 0.0;
    int f1_classes = 0;
    for (int c = 0; c < C; ++c) {
      if (vtp[c] + vfn[c] == 0) continue;  // phase not in gt
      double denom = double(2 * vtp[c] + vfp[c] + vfn[c]);
      f1_sum += denom > 0 ? 2.0 * double(vtp[c]) / denom : 0.0;
      ++f1_classes;
    }
    sum_f1 += f1_classes > 0 ? f1_sum / double(f1_classes) : 0.0;
    ++used_videos;
  }
  if (used_videos == 0)
    throw std::invalid_argument("phase_metrics: all videos empty");

  double prec_sum = 0.0, rec_sum = 0.0, jac_sum = 0.0;
  int phase_classes = 0;
  for (int c = 0; c < C; ++c) {
    if (tp[c] + fn[c] == 0) continue;  // phase absent from pooled ground truth
    double p_den = double(tp[c] + fp[c]);
    double r_den = double(tp[c] + fn[c]);
    double j_den = double(tp[c] + fp[c] + fn[c]);
    prec_sum += p_den > 0 ? double(tp[c]) / p_den : 0.0;
    rec_sum += double(tp[c]) / r_den;
    jac_sum += j_den > 0 ? double(tp[c]) / j_den : 0.0;
    ++phase_classes;
  }

  rep.metrics["video_accuracy"] = sum_acc / double(used_videos);
  rep.metrics["video_macro_f1"] = sum_f1 / double(used_videos);
  rep.metrics["phase_precision"] = phase_classes ? prec_sum / phase_classes : 0.0;
  rep.metrics["phase_recall"] = phase_classes ? rec_sum / phase_classes : 0.0;
  rep.metrics["phase_jaccard"] = phase_classes ? jac_sum / phase_classes : 0.0;
  if (!skipped.empty()) rep.diagnostics["empty_videos"] = skipped;
  return rep;
}

// ---- ranking AP ---------------------------------------------------------

double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("average_precision: size mismatch");
  std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  long long total_pos = std::count(labels.begin(), labels.end(), 1);
  if (total_pos == 0) return std::numeric_limits<double>::quiet_NaN();
  double ap = 0.0;
  long long cum_pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[order[k]] == 1) {
      ++cum_pos;
      ap += double(cum_pos) / double(k + 1);
    }
  }
  return ap / double(total_pos);
}

namespace {

struct MapResult {
  double map = 0.0;
  int used = 0;
  int skipped = 0;
};

MapResult mean_ap(const std::vector<std::vector<double>>& scores,
                  const std::vector<std::vector<int>>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw std::invalid_argument("mean_ap: bad shapes");
  std::size_t C = scores[0].size();
  MapResult res;
  std::vector<double> col_s(scores.size());
  std::vector<int> col_l(scores.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != C || labels[i].size() != C)
        throw std::invalid_argument("mean_ap: ragged rows");
      col_s[i] = scores[i][c];
      col_l[i] = labels[i][c];
    }
    double ap = average_precision(col_s, col_l);
    if (std::isnan(ap)) {
      ++res.skipped;
    } else {
      sum += ap;
      ++res.used;
    }
  }
  res.map = res.used ? sum / res.used : 0.0;
  return res;
}

// per-instance component scores/labels: max score and any-positive over the
// triplet classes mapping to each component key
void disentangle(const std::vector<std::vector<double>>& scores,
                 const std::vector<std::vector<int>>& labels,
                 const std::vector<int>& key,  // triplet class -> component key
                 std::vector<std::vector<double>>& out_scores,
                 std::vector<std::vector<int>>& out_labels) {
  int n_keys = *std::max_element(key.begin(), key.end()) + 1;
  out_scores.assign(scores.size(), std::vector<double>(n_keys, 0.0));
  out_labels.assign(scores.size(), std::vector<int>(n_keys, 0));
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t t = 0; t < key.size(); ++t) {
      int k = key[t];
      out_scores[i][k] = std::max(out_scores[i][k], scores[i][t]);
      out_labels[i][k] = out_labels[i][k] || labels[i][t];
    }
}

}  // namespace

MetricReport triplet_map(const MultiLabelScores& s) {
  if (!s.maps)
    throw std::invalid_argument("triplet_map: component maps required");
  std::size_t C = s.scores.empty() ? 0 : s.scores[0].size();
  const auto& m = *s.maps;
  if (m.instrument.size() != C || m.verb.size() != C || m.target.size() != C)
    throw std::invalid_argument("triplet_map: component maps must cover all classes");

  int n_verb = *std::max_element(m.verb.begin(), m.verb.end()) + 1;
  int n_target = *std::max_element(m.target.begin(), m.target.end()) + 1;
  std::vector<int> iv(C), it(C);
  for (std::size_t t = 0; t < C; ++t) {
    iv[t] = m.instrument[t] * n_verb + m.verb[t];
    it[t] = m.instrument[t] * n_target + m.target[t];
  }

  MetricReport rep;
  int skipped_total = 0;
  auto component = [&](const char* name, const std::vector<int>& key) {
    std::vector<std::vector<double>> cs;
    std::vector<std::vector<int>> cl;
    disentangle(s.scores, s.labels, key, cs, cl);
    MapResult r = mean_ap(cs, cl);
    rep.metrics[name] = r.map;
    skipped_total += r.skipped;
  };
  component("AP_I", m.instrument);
  component("AP_V", m.verb);
  component("AP_T", m.target);
  component("AP_IV", iv);
  component("AP_IT", it);
  MapResult full = mean_ap(s.scores, s.labels);
  rep.metrics["AP_IVT"] = full.map;
  skipped_total += full.skipped;
  rep.diagnostics["classes_without_positives"] = skipped_total;
  return rep;
}

MetricReport multilabel_map_f1(const std::vector<std::vector<double>>& scores,
                               const std::vector<std::vector<int>>& labels,
                               double threshold) {
  MapResult r = mean_ap(scores, labels);
  std::size_t C = scores[0].size();
  double f1_sum = 0.0;
  int f1_classes = 0;
  for (std::size_t c = 0; c < C; ++c) {
    long long tp = 0, fp = 0, fn = 0, pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      bool pred = scores[i][c] >= threshold;
      bool gt = labels[i][c] == 1;
      pos += gt;
      if (pred && gt) ++tp;
      else if (pred) ++fp;
      else if (gt) ++fn;
    }
    if (pos == 0) continue;
    double denom = double(2 * tp + fp + fn);
    f1_sum += denom > 0 ? 2.0 * double(tp) / denom : 0.0;
    ++f1_classes;
  }
  MetricReport rep;
  rep.metrics["mAP"] = r.map;
  rep.metrics["macro_f1"] = f1_classes ? f1_sum / f1_classes : 0.0;
  rep.diagnostics["classes_without_positives"] = r.skipped;
  return rep;
}

// ---- segmentation -------------------------------------------------------

namespace {

double percentile_interp(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double pos = q * double(v.size() - 1);
  std::size_t lo = std::size_t(pos);
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - double(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

std::vector<std::pair<int, int>> boundary_pixels(const std::vector<int>& mask,
                                                 std::size_t h, std::size_t w,
                                                 int cls) {
  std::vector<std::pair<int, int>> out;
  auto at = [&](long y, long x) {
    return y >= 0 && y < long(h) && x >= 0 && x < long(w) &&
           mask[std::size_t(y) * w + std::size_t(x)] == cls;
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (mask[y * w + x] != cls) continue;
      long ly = long(y), lx = long(x);
      if (!at(ly - 1, lx) || !at(ly + 1, lx) || !at(ly, lx - 1) || !at(ly, lx + 1))
        out.emplace_back(int(y), int(x));
    }
  return out;
}

std::vector<double> directed_distances(const std::vector<std::pair<int, int>>& from,
                                       const std::vector<std::pair<int, int>>& to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& [fy, fx] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [ty, tx] : to) {
      double dy = fy - ty, dx = fx - tx;
      best = std::min(best, dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace

MetricReport dice_hd95(const MaskPair& m) {
  if (m.pred.size() != m.gt.size() || m.pred.size() != m.height * m.width)
    throw ShapeError("dice_hd95: mask dimensions disagree");
  if (m.classes <= 0) throw std::invalid_argument("dice_hd95: class count <= 0");
  double diag = std::sqrt(double(m.height * m.height + m.width * m.width));

  MetricReport rep;
  double dice_sum = 0.0, hd_sum = 0.0;
  int used = 0, skipped = 0;
  for (int c = 0; c < m.classes; ++c) {
    long long np = 0, ng = 0, ninter = 0;
    for (std::size_t i = 0; i < m.pred.size(); ++i) {
      bool p = m.pred[i] == c, g = m.gt[i] == c;
      np += p;
      ng += g;
      ninter += p && g;
    }
    if (np == 0 && ng == 0) {
      ++skipped;
      continue;
    }
    double dice, hd;
    if (np == 0 || ng == 0) {
      dice = 0.0;
      hd = diag;  // defined worst case for a one-sided class
    } else {
      dice = 2.0 * double(ninter) / double(np + ng);
      auto bp = boundary_pixels(m.pred, m.height, m.width, c);
      auto bg = boundary_pixels(m.gt, m.height, m.width, c);
      auto d1 = directed_distances(bp, bg);
      auto d2 = directed_distances(bg, bp);
      hd = std::max(percentile_interp(d1, 0.95), percentile_interp(d2, 0.95));
    }
    std::string k = std::to_string(c);
    rep.metrics["dice.c" + k] = dice;
    rep.metrics["hd95.c" + k] = hd;
    dice_sum += dice;
    hd_sum += hd;
    ++used;
  }
  rep.metrics["dice.mean"] = used ? dice_sum / used : 0.0;
  rep.metrics["hd95.mean"] = used ? hd_sum / used : 0.0;
  rep.diagnostics["classes_skipped"] = skipped;
  return rep;
}

// ---- instance segmentation ---------------------------------------------

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  double ax0 = a[0], ay0 = a[1], ax1 = a[2], ay1 = a[3];
  double bx0 = b[0], by0 = b[1], bx1 = b[2], by1 = b[3];
  double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  double inter = ix * iy;
  double area_a = (ax1 - ax0) * (ay1 - ay0);
  double area_b = (bx1 - bx0) * (by1 - by0);
  double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw ShapeError("mask_iou: size mismatch");
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    bool pa = a[i] != 0, pb = b[i] != 0;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni > 0 ? double(inter) / double(uni) : 0.0;
}

namespace {

// 101-point interpolated AP from TP/FP flags in score order
double ap_101(const std::vector<int>& tp_flags, long long n_gt) {
  if (n_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> prec, rec;
  long long tp = 0, fp = 0;
  for (int f : tp_flags) {
    if (f) ++tp;
    else ++fp;
    prec.push_back(double(tp) / double(tp + fp));
    rec.push_back(double(tp) / double(n_gt));
  }
  // precision envelope (monotone from the right)
  for (int i = int(prec.size()) - 2; i >= 0; --i)
    prec[std::size_t(i)] = std::max(prec[std::size_t(i)], prec[std::size_t(i) + 1]);
  double ap = 0.0;
  std::size_t idx = 0;
  for (int r = 0; r <= 100; ++r) {
    double target = double(r) / 100.0;
    while (idx < rec.size() && rec[idx] < target) ++idx;
    ap += idx < prec.size() ? prec[idx] : 0.0;
  }
  return ap / 101.0;
}

double instance_map_for(const std::vector<InstanceSet>& sets, bool use_mask) {
  std::set<int> classes;
  for (const auto& s : sets) {
    for (const auto& g : s.gts) classes.insert(g.cls);
    for (const auto& p : s.preds) classes.insert(p.cls);
  }
  double cls_sum = 0.0;
  int cls_used = 0;
  for (int cls : classes) {
    long long n_gt = 0;
    for (const auto& s : sets)
      for (const auto& g : s.gts) n_gt += g.cls == cls;
    if (n_gt == 0) continue;

    // all predictions of this class, globally score-ordered
    struct Cand {
      std::size_t img, idx;
      double score;
    };
    std::vector<Cand> cands;
    for (std::size_t si = 0; si < sets.size(); ++si)
      for (std::size_t pi = 0; pi < sets[si].preds.size(); ++pi)
        if (sets[si].preds[pi].cls == cls)
          cands.push_back({si, pi, sets[si].preds[pi].score});
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });

    double thr_sum = 0.0;
    for (int ti = 0; ti < 10; ++ti) {
      double thr = 0.5 + 0.05 * ti;
      std::vector<std::vector<bool>> gt_used(sets.size());
      for (std::size_t si = 0; si < sets.size(); ++si)
        gt_used[si].assign(sets[si].gts.size(), false);
      std::vector<int> tp_flags;
      tp_flags.reserve(cands.size());
      for (const auto& c : cands) {
        const auto& pred = sets[c.img].preds[c.idx];
        double best_iou = 0.0;
        std::size_t best_gt = 0;
        bool found = false;
        for (std::size_t gi = 0; gi < sets[c.img].gts.size(); ++gi) {
          const auto& gt = sets[c.img].gts[gi];
          if (gt.cls != cls || gt_used[c.img][gi]) continue;
          double iou = use_mask ? mask_iou(pred.mask, gt.mask)
                                : box_iou(pred.box, gt.box);
          if (iou >= thr && iou > best_iou) {
            best_iou = iou;
            best_gt = gi;
            found = true;
          }
        }
        if (found) {
          gt_used[c.img][best_gt] = true;
          tp_flags.push_back(1);
        } else {
          tp_flags.push_back(0);
        }
      }
      double ap = ap_101(tp_flags, n_gt);
      thr_sum += std::isnan(ap) ? 0.0 : ap;
    }
    cls_sum += thr_sum / 10.0;
    ++cls_used;
  }
  return cls_used ? cls_sum / cls_used : 0.0;
}

}  // namespace

MetricReport instance_map(const std::vector<InstanceSet>& sets) {
  for (const auto& s : sets)
    for (const auto& g : s.gts)
      if (g.box[2] <= g.box[0] || g.box[3] <= g.box[1])
        throw std::invalid_argument("instance_map: degenerate ground-truth box");
  MetricReport rep;
  rep.metrics["bbox_map"] = instance_map_for(sets, false);
  bool have_masks = true;
  for (const auto& s : sets) {
    for (const auto& g : s.gts) have_masks = have_masks && !g.mask.empty();
    for (const auto& p : s.preds) have_masks = have_masks && !p.mask.empty();
  }
  if (have_masks) rep.metrics["mask_map"] = instance_map_for(sets, true);
  return rep;
}

// ---- depth --------------------------------------------------------------

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

MetricReport depth_metrics(const DepthPair& d) {
  if (d.pred.size() != d.gt.size() || d.pred.size() != d.valid.size())
    throw ShapeError("depth_metrics: size mismatch");
  std::vector<double> gv, pv;
  for (std::size_t i = 0; i < d.pred.size(); ++i) {
    if (!d.valid[i]) continue;
    if (d.gt[i] <= 0.0)
      throw std::invalid_argument("depth_metrics: nonpositive ground truth on valid pixel");
    gv.push_back(d.gt[i]);
    pv.push_back(d.pred[i]);
  }
  if (gv.empty()) throw std::invalid_argument("depth_metrics: no valid pixels");

  double scale = median_of(gv) / median_of(pv);
  double abs_rel = 0.0, sq_rel = 0.0, mse = 0.0, mse_log = 0.0;
  long long delta_ok = 0, excluded = 0, n = 0;
  for (std::size_t i = 0; i < gv.size(); ++i) {
    double p = pv[i] * scale, g = gv[i];
    if (p <= 0.0) {
      ++excluded;
      continue;
    }
    abs_rel += std::abs(p - g) / g;
    sq_rel += (p - g) * (p - g) / g;
    mse += (p - g) * (p - g);
    double dl = std::log(p) - std::log(g);
    mse_log += dl * dl;
    delta_ok += std::max(p / g, g / p) < 1.25;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("depth_metrics: no usable pixels after scaling");
  MetricReport rep;
  rep.metrics["abs_rel"] = abs_rel / n;
  rep.metrics["sq_rel"] = sq_rel / n;
  rep.metrics["rmse"] = std::sqrt(mse / n);
  rep.metrics["rmse_log"] = std::sqrt(mse_log / n);
  rep.metrics["delta"] = double(delta_ok) / n;
  rep.diagnostics["excluded_nonpositive_pred"] = excluded;
  return rep;
}

Tensor silog_loss(const Tensor& pred_log_depth, const std::vector<double>& gt_depth,
                  const std::vector<std::uint8_t>& valid, double lambda) {
  if (pred_log_depth.size() != gt_depth.size() || gt_depth.size() != valid.size())
    throw ShapeError("silog_loss: size mismatch");
  std::vector<double> log_gt(gt_depth.size(), 0.0), mask(gt_depth.size(), 0.0);
  std::size_t m = 0;
  for (std::size_t i = 0; i < gt_depth.size(); ++i) {
    if (!valid[i]) continue;
    if (gt_depth[i] <= 0.0)
      throw std::invalid_argument("silog_loss: nonpositive ground truth on valid pixel");
    log_gt[i] = std::log(gt_depth[i]);
    mask[i] = 1.0;
    ++m;
  }
  if (m == 0) throw std::invalid_argument("silog_loss: empty mask");
  Tensor diff = sub(pred_log_depth, Tensor::constant(pred_log_depth.shape(), log_gt));
  Tensor masked = mul(diff, Tensor::constant(pred_log_depth.shape(), mask));
  Tensor mean_sq = scale(sum_all(mul(masked, masked)), 1.0 / double(m));
  Tensor mean_d = scale(sum_all(masked), 1.0 / double(m));
  return sub(mean_sq, scale(mul(mean_d, mean_d), lambda));
}

// ---- text generation ----------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    for (auto& ch : tok) ch = char(std::tolower((unsigned char)ch));
    out.push_back(tok);
  }
  return out;
}

namespace {

std::map<std::vector<std::string>, long long> ngram_counts(
    const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, long long> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

std::size_t lcs_len(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct MeteorAlign {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// exact-match unigram alignment, candidate order, preferring contiguity
MeteorAlign meteor_align(const std::vector<std::string>& cand,
                         const std::vector<std::string>& ref) {
  std::vector<bool> ref_used(ref.size(), false);
  MeteorAlign out;
  long prev_ref = -2;
  for (const auto& tok : cand) {
    // prefer the reference slot continuing the current chunk
    long pick = -1;
    if (prev_ref + 1 >= 0 && std::size_t(prev_ref + 1) < ref.size() &&
        !ref_used[std::size_t(prev_ref + 1)] && ref[std::size_t(prev_ref + 1)] == tok)
      pick = prev_ref + 1;
    if (pick < 0)
      for (std::size_t j = 0; j < ref.size(); ++j)
        if (!ref_used[j] && ref[j] == tok) {
          pick = long(j);
          break;
        }
    if (pick < 0) {
      prev_ref = -2;
      continue;
    }
    ref_used[std::size_t(pick)] = true;
    ++out.matches;
    if (pick != prev_ref + 1) ++out.chunks;
    prev_ref = pick;
  }
  return out;
}

}  // namespace

MetricReport text_gen_metrics(const std::vector<std::string>& candidates,
                              const std::vector<std::string>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("text_gen_metrics: need one reference per candidate");
  if (candidates.empty())
    throw std::invalid_argument("text_gen_metrics: empty corpus");

  constexpr std::size_t kMaxN = 4;
  std::array<long long, kMaxN> clipped{}, total{};
  long long cand_len = 0, ref_len = 0;
  double rouge_sum = 0.0, meteor_sum = 0.0;
  int empty_candidates = 0;

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto c = tokenize(candidates[i]);
    auto r = tokenize(references[i]);
    if (c.empty()) ++empty_candidates;
    cand_len += (long long)c.size();
    ref_len += (long long)r.size();
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      auto cc = ngram_counts(c, n);
      auto rc = ngram_counts(r, n);
      for (const auto& [gram, cnt] : cc) {
        auto it = rc.find(gram);
        clipped[n - 1] += std::min(cnt, it == rc.end() ? 0LL : it->second);
        total[n - 1] += cnt;
      }
    }
    // ROUGE-L sentence F from LCS
    if (!c.empty() && !r.empty()) {
      std::size_t l = lcs_len(c, r);
      double p = double(l) / double(c.size());
      double rr = double(l) / double(r.size());
      rouge_sum += (p + rr) > 0 ? 2.0 * p * rr / (p + rr) : 0.0;
    }
    // METEOR, exact-match configuration
    if (!c.empty() && !r.empty()) {
      MeteorAlign al = meteor_align(c, r);
      if (al.matches > 0) {
        double p = double(al.matches) / double(c.size());
        double rr = double(al.matches) / double(r.size());
        double fmean = 10.0 * p * rr / (rr + 9.0 * p);
        double frag = double(al.chunks) / double(al.matches);
        double penalty = 0.5 * frag * frag * frag;
        meteor_sum += fmean * (1.0 - penalty);
      }
    }
  }

  MetricReport rep;
  double bp = cand_len >= ref_len || cand_len == 0
                  ? (cand_len == 0 ? 0.0 : 1.0)
                  : std::exp(1.0 - double(ref_len) / double(cand_len));
  double log_prec_sum = 0.0;
  bool dead = false;
  for (std::size_t n = 1; n <= kMaxN; ++n) {
    if (clipped[n - 1] == 0 || total[n - 1] == 0) dead = true;
    if (!dead)
      log_prec_sum += std::log(double(clipped[n - 1]) / double(total[n - 1]));
    rep.metrics["bleu" + std::to_string(n)] =
        dead ? 0.0 : bp * std::exp(log_prec_sum / double(n));
  }
  rep.metrics["rouge_l"] = rouge_sum / double(candidates.size());
  rep.metrics["meteor"] = meteor_sum / double(candidates.size());
  rep.diagnostics["empty_candidates"] = empty_candidates;
  return rep;
}

// ---- retrieval ----------------------------------------------------------

MetricReport recall_at_k(const RetrievalMatrix& r, const std::vector<std::size_t>& ks) {
  if (r.sim.size() != r.queries * r.gallery || r.match.size() != r.queries)
    throw ShapeError("recall_at_k: matrix dimensions disagree");
  for (std::size_t k : ks)
    if (k == 0 || k > r.gallery)
      throw std::invalid_argument("recall_at_k: k=" + std::to_string(k) +
                                  " exceeds gallery size " + std::to_string(r.gallery));
  for (std::size_t m : r.match)
    if (m >= r.gallery)
      throw std::out_of_range("recall_at_k: match index out of gallery");

  // rank of the true match per query (descending similarity, ties by index)
  std::vector<std::size_t> ranks(r.queries);
  for (std::size_t q = 0; q < r.queries; ++q) {
    const double* row = r.sim.data() + q * r.gallery;
    std::size_t m = r.match[q];
    std::size_t rank = 1;
    for (std::size_t g = 0; g < r.gallery; ++g) {
      if (g == m) continue;
      if (row[g] > row[m] || (row[g] == row[m] && g < m)) ++rank;
    }
    ranks[q] = rank;
  }
  MetricReport rep;
  double sum = 0.0;
  for (std::size_t k : ks) {
    long long hit = 0;
    for (auto rk : ranks) hit += rk <= k;
    double rec = double(hit) / double(r.queries);
    rep.metrics["recall@" + std::to_string(k)] = rec;
    sum += rec;
  }
  rep.metrics["mean_recall"] = ks.empty() ? 0.0 : sum / double(ks.size());
  return rep;
}

std::vector<int> zero_shot_classify(const Array& image_embs,
                                    const Array& class_text_embs) {
  if (image_embs.shape.size() != 2 || class_text_embs.shape.size() != 2 ||
      image_embs.shape[1] != class_text_embs.shape[1])
    throw ShapeError("zero_shot_classify: embedding dims disagree, " +
                     shape_str(image_embs.shape) + " vs " +
                     shape_str(class_text_embs.shape));
  std::size_t n = image_embs.shape[0], d = image_embs.shape[1];
  std::size_t C = class_text_embs.shape[0];
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        dot += image_embs.values[i * d + k] * class_text_embs.values[c * d + k];
      if (dot > best) {
        best = dot;
        out[i] = int(c);
      }
    }
  }
  return out;
}

}  // namespace zen
