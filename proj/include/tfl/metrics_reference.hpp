#pragma once

// Deliberately naive re-implementations of the evaluation metrics, used to cross-check the
// production versions. Quadratic (or worse) and allocation-heavy; not for real workloads.

#include <optional>
#include <span>
#include <vector>

#include "tfl/metrics.hpp"

namespace tfl::eval::reference {

std::vector<Prediction> soft_nms(const std::vector<Prediction>& preds, double sigma, double min_score);
double average_precision(const ItemPreds& preds, const ItemGts& gts, double tiou_threshold);
double average_recall(const ItemPreds& preds, const ItemGts& gts, std::size_t proposals,
                      std::span<const double> tiou_grid);
TiouSweep psynd_protocol(const ItemPreds& preds, const ItemGts& gts, std::span<const double> score_thresholds);
std::optional<double> video_auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace tfl::eval::reference
