#include "tfl/metrics_reference.hpp"

#include <cmath>

namespace tfl::eval::reference {

namespace {

double overlap(double s1, double e1, double s2, double e2) {
    const double lo = s1 > s2 ? s1 : s2;
    const double hi = e1 < e2 ? e1 : e2;
    if (hi <= lo) return 0.0;
    const double inter = hi - lo;
    return inter / ((e1 - s1) + (e2 - s2) - inter);
}

bool better(const Prediction& a, const Prediction& b) {
    if (a.score > b.score) return true;
    if (a.score < b.score) return false;
    if (a.start < b.start) return true;
    if (a.start > b.start) return false;
    return a.end < b.end;
}

// Greedy matching over the first k globally ranked predictions; returns the true-positive count.
std::size_t true_positives(const std::vector<std::pair<std::size_t, Prediction>>& ranked, std::size_t k,
                           const ItemGts& gts, double thr) {
    std::vector<std::vector<int>> used(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);
    std::size_t tp = 0;
    for (std::size_t r = 0; r < k; ++r) {
        const auto& [item, p] = ranked[r];
        int pick = -1;
        double pick_o = 0.0;
        for (std::size_t j = 0; j < gts[item].size(); ++j) {
            const double o = overlap(p.start, p.end, gts[item][j].start, gts[item][j].end);
            if (used[item][j] || o < thr) continue;
            if (pick < 0 || o > pick_o) {
                pick = static_cast<int>(j);
                pick_o = o;
            }
        }
        if (pick >= 0) {
            used[item][static_cast<std::size_t>(pick)] = 1;
            ++tp;
        }
    }
    return tp;
}

}  // namespace

std::vector<Prediction> soft_nms(const std::vector<Prediction>& preds, double sigma, double min_score) {
    std::vector<Prediction> pool;
    for (const auto& p : preds) {
        if (p.score >= min_score) pool.push_back(p);
    }
    if (pool.empty()) return {};
    std::size_t top = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
        if (better(pool[i], pool[top])) top = i;
    }
    const Prediction chosen = pool[top];
    std::vector<Prediction> rest;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (i == top) continue;
        Prediction q = pool[i];
        const double o = overlap(q.start, q.end, chosen.start, chosen.end);
        q.score = q.score * std::exp(-(o * o) / sigma);
        rest.push_back(q);
    }
    std::vector<Prediction> out{chosen};
    for (const auto& p : soft_nms(rest, sigma, min_score)) out.push_back(p);
    return out;
}

double average_precision(const ItemPreds& preds, const ItemGts& gts, double tiou_threshold) {
    std::vector<std::pair<std::size_t, Prediction>> ranked;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (const auto& p : preds[i]) ranked.emplace_back(i, p);
    }
    // selection sort by (score desc, item, start, end)
    for (std::size_t a = 0; a < ranked.size(); ++a) {
        for (std::size_t b = a + 1; b < ranked.size(); ++b) {
            const auto& x = ranked[a];
            const auto& y = ranked[b];
            bool swap = false;
            if (y.second.score != x.second.score) swap = y.second.score > x.second.score;
            else if (y.first != x.first) swap = y.first < x.first;
            else swap = better(y.second, x.second);
            if (swap) std::swap(ranked[a], ranked[b]);
        }
    }
    std::size_t npos = 0;
    for (const auto& g : gts) npos += g.size();
    if (npos == 0 || ranked.empty()) return 0.0;

    const std::size_t n = ranked.size();
    std::vector<double> prec(n + 1, 0.0), rec(n + 1, 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
        const auto tp = static_cast<double>(true_positives(ranked, k, gts, tiou_threshold));
        prec[k] = tp / static_cast<double>(k);
        rec[k] = tp / static_cast<double>(npos);
    }
    double area = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
        double envelope = 0.0;
        for (std::size_t j = k; j <= n; ++j) envelope = prec[j] > envelope ? prec[j] : envelope;
        area += (rec[k] - rec[k - 1]) * envelope;
    }
    return area;
}

double average_recall(const ItemPreds& preds, const ItemGts& gts, std::size_t proposals,
                      std::span<const double> tiou_grid) {
    std::size_t npos = 0;
    for (const auto& g : gts) npos += g.size();
    if (npos == 0) return 0.0;
    double total = 0.0;
    for (double thr : tiou_grid) {
        std::size_t recalled = 0;
        for (std::size_t i = 0; i < gts.size(); ++i) {
            for (const auto& g : gts[i]) {
                bool found = false;
                for (const auto& p : preds[i]) {
                    std::size_t ahead = 0;
                    for (const auto& q : preds[i]) ahead += better(q, p) ? 1 : 0;
                    if (ahead < proposals && overlap(p.start, p.end, g.start, g.end) >= thr) found = true;
                }
                recalled += found ? 1 : 0;
            }
        }
        total += static_cast<double>(recalled) / static_cast<double>(npos);
    }
    return total / static_cast<double>(tiou_grid.size());
}

TiouSweep psynd_protocol(const ItemPreds& preds, const ItemGts& gts, std::span<const double> score_thresholds) {
    TiouSweep out;
    for (double thr : score_thresholds) {
        out.thresholds.push_back(thr);
        std::vector<double> per_item;
        for (std::size_t i = 0; i < gts.size(); ++i) {
            if (gts[i].empty()) continue;
            std::vector<Prediction> kept;
            for (const auto& p : preds[i]) {
                if (!(p.score < thr)) kept.push_back(p);
            }
            double s = 0.0;
            for (const auto& g : gts[i]) {
                std::vector<double> overlaps{0.0};
                for (const auto& p : kept) overlaps.push_back(overlap(p.start, p.end, g.start, g.end));
                double m = overlaps[0];
                for (double o : overlaps) m = o > m ? o : m;
                s += m;
            }
            per_item.push_back(s / static_cast<double>(gts[i].size()));
        }
        double mean = 0.0;
        for (double v : per_item) mean += v;
        out.curve.push_back(per_item.empty() ? 0.0 : mean / static_cast<double>(per_item.size()));
    }
    double sum = 0.0;
    for (double v : out.curve) {
        sum += v;
        out.best = v > out.best ? v : out.best;
    }
    out.average = out.curve.empty() ? 0.0 : sum / static_cast<double>(out.curve.size());
    return out;
}

std::optional<double> video_auc(std::span<const double> scores, std::span<const int> labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] == 1) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    if (pairs == 0) return std::nullopt;
    return wins / static_cast<double>(pairs);
}

}  // namespace tfl::eval::reference
