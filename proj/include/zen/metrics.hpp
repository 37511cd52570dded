#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "zen/tensor.hpp"

namespace zen {

// Named scalar metrics for one run of one task.
struct MetricReport {
  std::map<std::string, double> metrics;
  nlohmann::json diagnostics = nlohmann::json::object();

  double at(const std::string& name) const;
  nlohmann::json to_json() const;
};

// ---- surgical phase recognition ----------------------------------------

struct PhaseVideo {
  std::string id;
  std::vector<int> pred;
  std::vector<int> gt;
};

struct PhaseSequences {
  std::vector<PhaseVideo> videos;
  int classes = 0;
};

// video_macro_f1 / video_accuracy: per video, then averaged over videos.
// phase_precision / phase_recall / phase_jaccard: pooled frames per phase,
// then averaged over phases present in ground truth.
MetricReport phase_metrics(const PhaseSequences& seqs);

// ---- multi-label ranking (triplet, CVS) --------------------------------

struct TripletComponentMaps {
  std::vector<int> instrument;  // triplet class -> instrument id
  std::vector<int> verb;
  std::vector<int> target;
};

struct MultiLabelScores {
  std::vector<std::vector<double>> scores;  // [instances][classes], in [0,1]
  std::vector<std::vector<int>> labels;     // binary, same shape
  std::optional<TripletComponentMaps> maps;
};

// All-points AP per class (mean precision at positive ranks); classes with no
// positives are excluded from the mean and counted in diagnostics.
double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels);

MetricReport triplet_map(const MultiLabelScores& s);  // AP_I..AP_IVT

MetricReport multilabel_map_f1(const std::vector<std::vector<double>>& scores,
                               const std::vector<std::vector<int>>& labels,
                               double threshold);

// ---- semantic segmentation ---------------------------------------------

struct MaskPair {
  std::vector<int> pred;  // row-major [h*w] class labels
  std::vector<int> gt;
  std::size_t height = 0;
  std::size_t width = 0;
  int classes = 0;
};

// Dice and 95th-percentile symmetric boundary distance per class.
// Class absent from both masks: skipped. Absent from exactly one: Dice 0 and
// HD95 = image diagonal.
MetricReport dice_hd95(const MaskPair& m);

// ---- instance segmentation ---------------------------------------------

struct InstancePred {
  int cls = 0;
  double score = 0.0;
  std::array<double, 4> box{};          // x0,y0,x1,y1
  std::vector<std::uint8_t> mask;       // row-major [h*w], may be empty
};

struct InstanceGt {
  int cls = 0;
  std::array<double, 4> box{};
  std::vector<std::uint8_t> mask;
};

struct InstanceSet {
  std::vector<InstancePred> preds;
  std::vector<InstanceGt> gts;
  std::size_t height = 0;
  std::size_t width = 0;
};

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);
double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

// COCO-style: greedy score-ordered matching at IoU thresholds 0.50:0.05:0.95,
// 101-point interpolated AP, averaged over thresholds then classes.
MetricReport instance_map(const std::vector<InstanceSet>& sets);

// ---- depth estimation --------------------------------------------------

struct DepthPair {
  std::vector<double> pred;
  std::vector<double> gt;                // strictly positive on valid pixels
  std::vector<std::uint8_t> valid;
};

// Median scaling (median(gt)/median(pred)) applied before the five metrics.
MetricReport depth_metrics(const DepthPair& d);

// Scale-invariant log loss over valid pixels; differentiable in pred_log_depth.
Tensor silog_loss(const Tensor& pred_log_depth, const std::vector<double>& gt_depth,
                  const std::vector<std::uint8_t>& valid, double lambda = 0.85);

// ---- text generation ---------------------------------------------------

std::vector<std::string> tokenize(const std::string& text);  // lowercase, whitespace

// BLEU-1..4 (corpus, brevity penalty), ROUGE-L F (LCS, per-pair averaged),
// METEOR exact-match configuration.
MetricReport text_gen_metrics(const std::vector<std::string>& candidates,
                              const std::vector<std::string>& references);

// ---- retrieval / zero-shot ---------------------------------------------

struct RetrievalMatrix {
  std::size_t queries = 0;
  std::size_t gallery = 0;
  std::vector<double> sim;          // row-major [queries x gallery]
  std::vector<std::size_t> match;   // ground-truth gallery index per query
};

MetricReport recall_at_k(const RetrievalMatrix& r, const std::vector<std::size_t>& ks);

// argmax over classes of the dot product; ties take the lowest class index
std::vector<int> zero_shot_classify(const Array& image_embs, const Array& class_text_embs);

}  // namespace zen
