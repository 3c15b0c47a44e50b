#include "tfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "tfl/errors.hpp"

namespace tfl::eval {

using nlohmann::json;

double tiou(const Segment& a, const Segment& b) {
    if (!(a.start < a.end) || !(b.start < b.end)) throw ArgumentError("tiou: degenerate interval");
    const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const double uni = (a.end - a.start) + (b.end - b.start) - inter;
    return inter / uni;
}

bool ranks_before(const Prediction& a, const Prediction& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    return a.end < b.end;
}

std::vector<Prediction> soft_nms(std::vector<Prediction> preds, double sigma, double min_score, std::size_t max_keep) {
    if (!(sigma > 0.0)) throw ArgumentError("soft_nms: sigma must be positive");
    std::erase_if(preds, [&](const Prediction& p) { return p.score < min_score; });
    std::vector<Prediction> kept;
    while (!preds.empty() && kept.size() < max_keep) {
        auto top = std::min_element(preds.begin(), preds.end(), ranks_before);
        const Prediction chosen = *top;
        preds.erase(top);
        kept.push_back(chosen);
        for (auto& p : preds) {
            const double o = tiou(p, chosen);
            p.score *= std::exp(-(o * o) / sigma);
        }
        std::erase_if(preds, [&](const Prediction& p) { return p.score < min_score; });
    }
    return kept;
}

double average_precision(const ItemPreds& preds, const ItemGts& gts, double tiou_threshold) {
    if (preds.size() != gts.size()) throw ArgumentError("average_precision: prediction and ground-truth item counts differ");
    std::size_t total_gts = 0;
    for (const auto& g : gts) total_gts += g.size();

    struct Ranked {
        std::size_t item;
        Prediction p;
    };
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (const auto& p : preds[i]) ranked.push_back({i, p});
    }
    if (total_gts == 0 || ranked.empty()) return 0.0;
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.p.score != b.p.score) return a.p.score > b.p.score;
        if (a.item != b.item) return a.item < b.item;
        if (a.p.start != b.p.start) return a.p.start < b.p.start;
        return a.p.end < b.p.end;
    });

    std::vector<std::vector<bool>> matched(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) matched[i].assign(gts[i].size(), false);

    std::vector<double> precision(ranked.size());
    std::vector<bool> hit(ranked.size(), false);
    std::size_t tp = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto& [item, p] = ranked[r];
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < gts[item].size(); ++j) {
            if (matched[item][j]) continue;
            const double o = tiou(p, gts[item][j]);
            if (o >= tiou_threshold && o > best) {
                best = o;
                best_j = j;
            }
        }
        if (best >= 0.0) {
            matched[item][best_j] = true;
            hit[r] = true;
            ++tp;
        }
        precision[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
    }
    // precision envelope from the right, then area over recall steps
    for (std::size_t r = ranked.size() - 1; r-- > 0;) precision[r] = std::max(precision[r], precision[r + 1]);
    // each hit adds one recall step of 1 / total_gts; divide once so a perfect ranking is exactly 1
    double area = 0.0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        if (hit[r]) area += precision[r];
    }
    return area / static_cast<double>(total_gts);
}

double average_recall(const ItemPreds& preds, const ItemGts& gts, std::size_t proposals,
                      std::span<const double> tiou_grid) {
    if (preds.size() != gts.size()) throw ArgumentError("average_recall: prediction and ground-truth item counts differ");
    if (tiou_grid.empty()) throw ArgumentError("average_recall: empty tIoU grid");
    std::size_t total_gts = 0;
    for (const auto& g : gts) total_gts += g.size();
    if (total_gts == 0) return 0.0;

    // best tIoU reached by the kept proposals, per ground truth
    std::vector<double> best;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::vector<Prediction> kept = preds[i];
        std::sort(kept.begin(), kept.end(), ranks_before);
        if (kept.size() > proposals) kept.resize(proposals);
        for (const auto& g : gts[i]) {
            double b = 0.0;
            for (const auto& p : kept) b = std::max(b, tiou(p, g));
            best.push_back(b);
        }
    }
    double sum = 0.0;
    for (double thr : tiou_grid) {
        const auto recalled = std::count_if(best.begin(), best.end(), [&](double b) { return b >= thr; });
        sum += static_cast<double>(recalled) / static_cast<double>(total_gts);
    }
    return sum / static_cast<double>(tiou_grid.size());
}

TiouSweep psynd_protocol(const ItemPreds& preds, const ItemGts& gts, std::span<const double> score_thresholds) {
    if (preds.size() != gts.size()) throw ArgumentError("psynd_protocol: prediction and ground-truth item counts differ");
    TiouSweep out;
    out.thresholds.assign(score_thresholds.begin(), score_thresholds.end());
    for (double thr : score_thresholds) {
        double total = 0.0;
        std::size_t items = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (gts[i].empty()) continue;
            double item_sum = 0.0;
            for (const auto& g : gts[i]) {
                double b = 0.0;
                for (const auto& p : preds[i]) {
                    if (p.score >= thr) b = std::max(b, tiou(p, g));
                }
                item_sum += b;
            }
            total += item_sum / static_cast<double>(gts[i].size());
            ++items;
        }
        out.curve.push_back(items == 0 ? 0.0 : total / static_cast<double>(items));
    }
    if (!out.curve.empty()) {
        out.average = std::accumulate(out.curve.begin(), out.curve.end(), 0.0) / static_cast<double>(out.curve.size());
        out.best = *std::max_element(out.curve.begin(), out.curve.end());
    }
    return out;
}

std::optional<double> video_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ArgumentError("video_auc: scores and labels differ in length");
    const auto n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // mid-ranks (1-based) over tie groups
    double rank_sum_pos = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum_pos += mid;
                ++pos;
            }
        }
        i = j;
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;
    const double p = static_cast<double>(pos);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

std::vector<double> item_scores(const ItemPreds& preds) {
    std::vector<double> out;
    for (const auto& item : preds) {
        double s = 0.0;
        for (const auto& p : item) s = std::max(s, p.score);
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------

EvalProtocol::EvalProtocol() {
    for (int i = 0; i <= 9; ++i) ar_tiou_grid.push_back((50.0 + 5.0 * i) / 100.0);
    for (int i = 1; i <= 19; ++i) score_sweep.push_back(5.0 * i / 100.0);
}

void EvalProtocol::validate() const {
    auto in_unit = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0 && x <= 1.0; });
    };
    if (tiou_thresholds.empty() || !in_unit(tiou_thresholds)) throw ConfigError("protocol: tIoU thresholds must lie in (0, 1]");
    if (ar_tiou_grid.empty() || !in_unit(ar_tiou_grid)) throw ConfigError("protocol: AR grid must lie in (0, 1]");
    if (score_sweep.empty() || !in_unit(score_sweep)) throw ConfigError("protocol: score sweep must lie in (0, 1]");
    if (proposal_counts.empty() || proposal_counts[0] == 0) throw ConfigError("protocol: proposal counts must be positive");
    for (std::size_t i = 1; i < proposal_counts.size(); ++i) {
        if (proposal_counts[i] <= proposal_counts[i - 1]) throw ConfigError("protocol: proposal counts must increase");
    }
}

EvalProtocol protocol_from_json(const json& j) {
    EvalProtocol p;
    try {
        p.tiou_thresholds = j.value("tiou_thresholds", p.tiou_thresholds);
        p.proposal_counts = j.value("proposal_counts", p.proposal_counts);
        p.ar_tiou_grid = j.value("ar_tiou_grid", p.ar_tiou_grid);
        p.score_sweep = j.value("score_sweep", p.score_sweep);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("protocol config: ") + e.what());
    }
    p.validate();
    return p;
}

json to_json(const EvalProtocol& p) {
    return {{"tiou_thresholds", p.tiou_thresholds},
            {"proposal_counts", p.proposal_counts},
            {"ar_tiou_grid", p.ar_tiou_grid},
            {"score_sweep", p.score_sweep}};
}

MetricReport evaluate_predictions(const ItemPreds& preds, const ItemGts& gts, std::span<const int> labels,
                                  const EvalProtocol& protocol) {
    MetricReport r;
    r.num_items = preds.size();
    for (const auto& g : gts) r.num_ground_truths += g.size();
    for (double thr : protocol.tiou_thresholds) r.ap[thr] = average_precision(preds, gts, thr);
    for (auto an : protocol.proposal_counts) r.ar[an] = average_recall(preds, gts, an, protocol.ar_tiou_grid);
    r.tiou_sweep = psynd_protocol(preds, gts, protocol.score_sweep);
    const auto scores = item_scores(preds);
    r.auc = video_auc(scores, labels);
    return r;
}

static std::string key(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

json to_json(const MetricReport& r) {
    json ap = json::object();
    for (const auto& [thr, v] : r.ap) ap[key(thr)] = v;
    json ar = json::object();
    for (const auto& [an, v] : r.ar) ar[std::to_string(an)] = v;
    json out{{"ap", ap},
             {"ar", ar},
             {"tiou_sweep",
              {{"score_thresholds", r.tiou_sweep.thresholds},
               {"mean_tiou", r.tiou_sweep.curve},
               {"average", r.tiou_sweep.average},
               {"best", r.tiou_sweep.best}}},
             {"num_items", r.num_items},
             {"num_ground_truths", r.num_ground_truths}};
    out["auc"] = r.auc ? json(*r.auc) : json(nullptr);
    return out;
}

}  // namespace tfl::eval
