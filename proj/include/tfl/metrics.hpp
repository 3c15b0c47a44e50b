#pragma once

// Post-processing and evaluation: temporal IoU, Gaussian Soft-NMS, AP at a tIoU threshold,
// AR at a proposal budget, the score-threshold tIoU sweep and video-level AUC.

#include <map>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfl/data_model.hpp"

namespace tfl::eval {

using ItemPreds = std::vector<std::vector<Prediction>>;  // per item
using ItemGts = std::vector<std::vector<Segment>>;       // per item

// |a ∩ b| / |a ∪ b|; throws ArgumentError for start >= end.
double tiou(const Segment& a, const Segment& b);
inline double tiou(const Prediction& a, const Segment& b) { return tiou(Segment{a.start, a.end}, b); }
inline double tiou(const Prediction& a, const Prediction& b) {
    return tiou(Segment{a.start, a.end}, Segment{b.start, b.end});
}

// Strict ranking used everywhere: score descending, then start, then end ascending.
bool ranks_before(const Prediction& a, const Prediction& b);

// Gaussian Soft-NMS: repeatedly keeps the best remaining prediction and multiplies every other
// remaining score by exp(-tIoU^2 / sigma); drops scores below min_score. At most max_keep are
// returned, in selection order (non-increasing score).
std::vector<Prediction> soft_nms(std::vector<Prediction> preds, double sigma, double min_score,
                                 std::size_t max_keep = static_cast<std::size_t>(-1));

// Predictions ranked globally; each is greedily matched to the unmatched ground truth of its
// item with the highest tIoU >= threshold. All-point interpolated precision/recall area.
double average_precision(const ItemPreds& preds, const ItemGts& gts, double tiou_threshold);

// Top-`proposals` predictions per item; a ground truth counts as recalled at a threshold when any
// kept prediction reaches it. Recall averaged over the threshold grid.
double average_recall(const ItemPreds& preds, const ItemGts& gts, std::size_t proposals,
                      std::span<const double> tiou_grid);

struct TiouSweep {
    std::vector<double> thresholds;
    std::vector<double> curve;  // mean tIoU per score threshold
    double average = 0.0;
    double best = 0.0;
};

// For each score threshold keep predictions scoring at least that much; every ground truth
// takes its best tIoU among the kept ones (0 if none); items without ground truth are skipped.
TiouSweep psynd_protocol(const ItemPreds& preds, const ItemGts& gts, std::span<const double> score_thresholds);

// Area under the ROC curve by the rank statistic with ties counted half. nullopt when only one
// class is present.
std::optional<double> video_auc(std::span<const double> scores, std::span<const int> labels);

// Per-item confidence: the highest segment score, 0 with no segments.
std::vector<double> item_scores(const ItemPreds& preds);

struct EvalProtocol {
    std::vector<double> tiou_thresholds{0.5, 0.75, 0.95};
    std::vector<std::size_t> proposal_counts{10, 20, 50, 100};
    std::vector<double> ar_tiou_grid;  // 0.50, 0.55, .., 0.95
    std::vector<double> score_sweep;   // 0.05, 0.10, .., 0.95

    EvalProtocol();
    void validate() const;
};

EvalProtocol protocol_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalProtocol& p);

struct MetricReport {
    std::map<double, double> ap;
    std::map<std::size_t, double> ar;
    TiouSweep tiou_sweep;
    std::optional<double> auc;
    std::size_t num_items = 0;
    std::size_t num_ground_truths = 0;
};

MetricReport evaluate_predictions(const ItemPreds& preds, const ItemGts& gts, std::span<const int> labels,
                                  const EvalProtocol& protocol);
nlohmann::json to_json(const MetricReport& r);

}  // namespace tfl::eval
