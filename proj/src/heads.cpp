#include "tfl/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tfl/errors.hpp"
#include "tfl/nn.hpp"

namespace tfl::heads {

using nlohmann::json;

void HeadConfig::validate() const {
    if (tower_depth < 1) throw ConfigError("heads: tower_depth must be at least 1");
    if (head_dim < 1) throw ConfigError("heads: head_dim must be positive");
    if (!(center_sampling_radius > 0.0)) throw ConfigError("heads: center_sampling_radius must be positive");
    if (range_starts.empty() || range_starts[0] != 0.0) throw ConfigError("heads: regression ranges must start at 0");
    for (std::size_t i = 1; i < range_starts.size(); ++i) {
        if (!(range_starts[i] > range_starts[i - 1])) throw ConfigError("heads: regression ranges must increase");
    }
    if (!(prior_probability > 0.0 && prior_probability < 1.0)) throw ConfigError("heads: prior_probability outside (0, 1)");
    if (!(score_floor >= 0.0 && score_floor < 1.0)) throw ConfigError("heads: score_floor outside [0, 1)");
}

double HeadConfig::range_end(std::size_t level) const {
    return level + 1 < range_starts.size() ? range_starts[level + 1] : std::numeric_limits<double>::infinity();
}

HeadConfig head_config_from_json(const json& j) {
    HeadConfig c;
    try {
        c.tower_depth = j.value("tower_depth", c.tower_depth);
        c.head_dim = j.value("head_dim", c.head_dim);
        c.center_sampling_radius = j.value("center_sampling_radius", c.center_sampling_radius);
        c.range_starts = j.value("range_starts", c.range_starts);
        c.prior_probability = j.value("prior_probability", c.prior_probability);
        c.score_floor = j.value("score_floor", c.score_floor);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("heads config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const HeadConfig& c) {
    return {{"tower_depth", c.tower_depth},
            {"head_dim", c.head_dim},
            {"center_sampling_radius", c.center_sampling_radius},
            {"range_starts", c.range_starts},
            {"prior_probability", c.prior_probability},
            {"score_floor", c.score_floor}};
}

void LossWeights::validate() const {
    if (!(lambda_reg >= 0.0 && lambda_rec >= 0.0 && lambda_scls >= 0.0)) {
        throw ConfigError("loss: weights must be non-negative");
    }
    if (!(focal_alpha > 0.0) || !(focal_gamma >= 0.0)) throw ConfigError("loss: invalid focal parameters");
    if (!(focal_eps > 0.0 && focal_eps < 0.5)) throw ConfigError("loss: focal_eps outside (0, 0.5)");
}

LossWeights loss_weights_from_json(const json& j) {
    LossWeights w;
    try {
        w.lambda_reg = j.value("lambda_reg", w.lambda_reg);
        w.lambda_rec = j.value("lambda_rec", w.lambda_rec);
        w.lambda_scls = j.value("lambda_scls", w.lambda_scls);
        w.focal_alpha = j.value("focal_alpha", w.focal_alpha);
        w.focal_gamma = j.value("focal_gamma", w.focal_gamma);
        w.focal_eps = j.value("focal_eps", w.focal_eps);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("loss config: ") + e.what());
    }
    w.validate();
    return w;
}

json to_json(const LossWeights& w) {
    return {{"lambda_reg", w.lambda_reg},   {"lambda_rec", w.lambda_rec},   {"lambda_scls", w.lambda_scls},
            {"focal_alpha", w.focal_alpha}, {"focal_gamma", w.focal_gamma}, {"focal_eps", w.focal_eps}};
}

// ---------------------------------------------------------------------------

Heads::Heads(HeadConfig cfg, int input_dim, std::string prefix)
    : cfg_(std::move(cfg)), input_dim_(input_dim), prefix_(std::move(prefix)) {
    cfg_.validate();
    if (input_dim_ < 1) throw ConfigError("heads: input_dim must be positive");
}

void Heads::init(ParamStore& store, Rng& rng) const {
    for (const std::string branch : {"cls", "reg"}) {
        for (int i = 0; i < cfg_.tower_depth; ++i) {
            const std::string base = prefix_ + "." + branch + ".tower" + std::to_string(i);
            nn::Conv1d{base + ".conv", i == 0 ? input_dim_ : cfg_.head_dim, cfg_.head_dim, 3, 1, false}.init(store, rng);
            nn::LayerNorm{base + ".ln", cfg_.head_dim}.init(store);
        }
    }
    nn::Conv1d{prefix_ + ".cls.out", cfg_.head_dim, 1, 3, 1}.init(store, rng);
    nn::Conv1d{prefix_ + ".reg.out", cfg_.head_dim, 2, 3, 1}.init(store, rng);
    // rare-positive prior so the focal loss starts near its background level
    store.at(prefix_ + ".cls.out.b").setConstant(-std::log((1.0 - cfg_.prior_probability) / cfg_.prior_probability));
}

void Heads::check(const pyramid::PyramidFeatures& p) const {
    if (p.levels.empty() || p.levels.size() != p.strides.size()) throw ShapeError("heads: malformed pyramid");
    for (const auto& lvl : p.levels) {
        if (lvl.rows() != input_dim_) {
            throw ShapeError("heads: level has " + std::to_string(lvl.rows()) + " channels, expected " +
                             std::to_string(input_dim_));
        }
    }
}

Var Heads::tower(Binder& bind, const std::string& branch, Var x) const {
    for (int i = 0; i < cfg_.tower_depth; ++i) {
        const std::string base = prefix_ + "." + branch + ".tower" + std::to_string(i);
        x = nn::Conv1d{base + ".conv", i == 0 ? input_dim_ : cfg_.head_dim, cfg_.head_dim, 3, 1, false}(bind, x);
        x = ag::relu(nn::LayerNorm{base + ".ln", cfg_.head_dim}(bind, x));
    }
    return x;
}

std::vector<Var> Heads::classify_logits(Binder& bind, const pyramid::PyramidFeatures& p) const {
    check(p);
    std::vector<Var> out;
    for (const auto& lvl : p.levels) {
        out.push_back(nn::Conv1d{prefix_ + ".cls.out", cfg_.head_dim, 1, 3, 1}(bind, tower(bind, "cls", lvl)));
    }
    return out;
}

std::vector<Var> Heads::classify(Binder& bind, const pyramid::PyramidFeatures& p) const {
    auto logits = classify_logits(bind, p);
    for (auto& l : logits) l = ag::sigmoid(l);
    return logits;
}

std::vector<Var> Heads::regress(Binder& bind, const pyramid::PyramidFeatures& p) const {
    check(p);
    std::vector<Var> out;
    for (const auto& lvl : p.levels) {
        out.push_back(ag::softplus(nn::Conv1d{prefix_ + ".reg.out", cfg_.head_dim, 2, 3, 1}(bind, tower(bind, "reg", lvl))));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Prediction> decode_proposals(const std::vector<Mat>& scores, const std::vector<Mat>& distances,
                                         const std::vector<int>& strides, double feature_rate, double duration,
                                         double score_floor) {
    if (scores.size() != distances.size() || scores.size() != strides.size()) {
        throw ShapeError("decode_proposals: per-level inputs differ in count");
    }
    if (!(feature_rate > 0.0)) throw ArgumentError("decode_proposals: feature_rate must be positive");
    std::vector<Prediction> out;
    for (std::size_t l = 0; l < scores.size(); ++l) {
        const Mat& sc = scores[l];
        const Mat& d = distances[l];
        if (sc.rows() != 1 || d.rows() != 2 || sc.cols() != d.cols()) {
            throw ShapeError("decode_proposals: level " + std::to_string(l) + " shapes do not align");
        }
        const double s = strides[l];
        for (Eigen::Index p = 0; p < sc.cols(); ++p) {
            const double score = sc(0, p);
            if (!(score >= score_floor)) continue;
            const double x = static_cast<double>(p) * s;
            const double start = std::clamp((x - d(0, p) * s) / feature_rate, 0.0, duration);
            const double end = std::clamp((x + d(1, p) * s) / feature_rate, 0.0, duration);
            if (!(end > start)) continue;
            out.push_back({start, end, std::min(score, 1.0)});
        }
    }
    std::sort(out.begin(), out.end(), [](const Prediction& a, const Prediction& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.start != b.start) return a.start < b.start;
        return a.end < b.end;
    });
    return out;
}

Targets assign_targets(const std::vector<Segment>& segments, const std::vector<Eigen::Index>& level_lengths,
                       const std::vector<int>& strides, double feature_rate, const HeadConfig& cfg) {
    if (level_lengths.size() != strides.size()) throw ShapeError("assign_targets: level counts differ");
    if (level_lengths.size() > cfg.range_starts.size()) {
        throw ConfigError("assign_targets: " + std::to_string(level_lengths.size()) + " levels but " +
                          std::to_string(cfg.range_starts.size()) + " regression ranges");
    }
    Targets t;
    t.offsets.push_back(0);
    for (auto len : level_lengths) t.offsets.push_back(t.offsets.back() + len);
    const Eigen::Index n = t.offsets.back();
    t.labels = Mat::Zero(1, n);
    t.distances = Mat::Zero(2, n);

    for (std::size_t l = 0; l < level_lengths.size(); ++l) {
        const double s = strides[l];
        const double lo = cfg.range_starts[l];
        const double hi = cfg.range_end(l);
        for (Eigen::Index p = 0; p < level_lengths[l]; ++p) {
            const double x = static_cast<double>(p) * s;
            double best_len = std::numeric_limits<double>::infinity();
            for (const auto& seg : segments) {
                const double a = seg.start * feature_rate;
                const double b = seg.end * feature_rate;
                const double len = b - a;
                if (len < lo || len >= hi) continue;
                if (x < a || x > b) continue;
                if (std::abs(x - 0.5 * (a + b)) > cfg.center_sampling_radius * s) continue;
                if (len >= best_len) continue;
                best_len = len;
                const Eigen::Index col = t.offsets[l] + p;
                t.labels(0, col) = 1.0;
                t.distances(0, col) = (x - a) / s;
                t.distances(1, col) = (b - x) / s;
            }
        }
    }
    t.num_positive = static_cast<std::size_t>(t.labels.sum());
    return t;
}

Var classification_loss(Var logits, const Targets& targets, const LossWeights& w, double normalizer) {
    if (logits.rows() != 1 || logits.cols() != targets.labels.cols()) {
        throw ShapeError("classification_loss: logits do not match targets");
    }
    Var sum = ag::focal_loss_logits(logits, targets.labels, w.focal_alpha, w.focal_gamma, w.focal_eps);
    return ag::scale(sum, 1.0 / normalizer);
}

Var regression_loss(Var distances, const Targets& targets, double normalizer) {
    if (distances.rows() != 2 || distances.cols() != targets.distances.cols()) {
        throw ShapeError("regression_loss: distances do not match targets");
    }
    if (targets.num_positive == 0) return distances.graph->constant(Mat::Zero(1, 1));
    return ag::scale(ag::iou_loss(distances, targets.distances, targets.labels), 1.0 / normalizer);
}

LossBreakdown total_loss(const LossTerms& terms, const LossWeights& w, std::size_t batch_index) {
    const std::pair<const char*, Var> named[] = {{"cls", terms.cls}, {"reg", terms.reg}, {"rec", terms.rec}, {"scls", terms.scls}};
    for (const auto& [name, v] : named) {
        if (v.rows() != 1 || v.cols() != 1) throw ShapeError(std::string("total_loss: term ") + name + " is not a scalar");
        if (!std::isfinite(v.value()(0, 0))) {
            throw TrainingError(name, batch_index,
                                std::string("non-finite ") + name + " loss in batch " + std::to_string(batch_index));
        }
    }
    LossBreakdown out;
    out.total = ag::add(ag::add(terms.cls, ag::scale(terms.reg, w.lambda_reg)),
                        ag::add(ag::scale(terms.rec, w.lambda_rec), ag::scale(terms.scls, w.lambda_scls)));
    out.cls = terms.cls.value()(0, 0);
    out.reg = terms.reg.value()(0, 0);
    out.rec = terms.rec.value()(0, 0);
    out.scls = terms.scls.value()(0, 0);
    out.value = out.total.value()(0, 0);
    return out;
}

}  // namespace tfl::heads
