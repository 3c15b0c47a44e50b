#pragma once

// Dense per-level detection heads, target assignment and the training objective.

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfl/autograd.hpp"
#include "tfl/data_model.hpp"
#include "tfl/params.hpp"
#include "tfl/pyramid.hpp"

namespace tfl::heads {

using ag::Var;

struct HeadConfig {
    int tower_depth = 3;
    int head_dim = 32;
    double center_sampling_radius = 1.5;  // in level strides
    // Lower bounds of the per-level segment-length ranges, in base positions; the last range is
    // open-ended. Level l accepts lengths in [range_starts[l], range_starts[l + 1]).
    std::vector<double> range_starts{0.0, 4.0, 8.0, 16.0, 32.0};
    double prior_probability = 0.01;
    double score_floor = 0.001;

    void validate() const;
    double range_end(std::size_t level) const;
};

HeadConfig head_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HeadConfig& cfg);

struct LossWeights {
    double lambda_reg = 2.0;
    double lambda_rec = 1.0;
    double lambda_scls = 0.1;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double focal_eps = 1e-7;

    void validate() const;
};

LossWeights loss_weights_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LossWeights& w);

class Heads {
public:
    Heads(HeadConfig cfg, int input_dim, std::string prefix = "heads");

    void init(ParamStore& store, Rng& rng) const;
    // Per level 1 x T_l classification logits (shared weights across levels).
    std::vector<Var> classify_logits(Binder& bind, const pyramid::PyramidFeatures& p) const;
    // Per level 1 x T_l scores in [0, 1].
    std::vector<Var> classify(Binder& bind, const pyramid::PyramidFeatures& p) const;
    // Per level 2 x T_l non-negative (start, end) distances in units of the level stride.
    std::vector<Var> regress(Binder& bind, const pyramid::PyramidFeatures& p) const;

    const HeadConfig& config() const { return cfg_; }

private:
    Var tower(Binder& bind, const std::string& branch, Var x) const;
    void check(const pyramid::PyramidFeatures& p) const;

    HeadConfig cfg_;
    int input_dim_;
    std::string prefix_;
};

// Turns per-position scores and distances into time segments. Position p of a level with
// stride s spans [(p*s - d_start*s) / rate, (p*s + d_end*s) / rate], clamped to [0, duration].
// Positions scoring below score_floor and degenerate segments are dropped. Output is sorted by
// score descending (ties: start, end ascending).
std::vector<Prediction> decode_proposals(const std::vector<Mat>& scores, const std::vector<Mat>& distances,
                                         const std::vector<int>& strides, double feature_rate, double duration,
                                         double score_floor);

// Per-position targets over the concatenation of all levels.
struct Targets {
    Mat labels;     // 1 x N, 1 for positives
    Mat distances;  // 2 x N, stride units, zero at negatives
    std::vector<Eigen::Index> offsets;  // level l occupies columns [offsets[l], offsets[l + 1])
    std::size_t num_positive = 0;
};

// Position p of level l (base position x = p * s_l) is positive for a segment [a, b] (in base
// positions) when |x - (a + b) / 2| <= radius * s_l, a <= x <= b and b - a lies in the level's
// range. When several segments qualify the shortest wins.
Targets assign_targets(const std::vector<Segment>& segments, const std::vector<Eigen::Index>& level_lengths,
                       const std::vector<int>& strides, double feature_rate, const HeadConfig& cfg);

// Focal loss summed over all positions, divided by normalizer.
Var classification_loss(Var logits, const Targets& targets, const LossWeights& w, double normalizer);
// 1 - IoU summed over positives, divided by normalizer; a constant 0 without positives.
Var regression_loss(Var distances, const Targets& targets, double normalizer);

struct LossTerms {
    Var cls;
    Var reg;
    Var rec;
    Var scls;
};

struct LossBreakdown {
    Var total;
    double cls = 0.0;
    double reg = 0.0;
    double rec = 0.0;
    double scls = 0.0;
    double value = 0.0;
};

// cls + lambda_reg * reg + lambda_rec * rec + lambda_scls * scls. Throws TrainingError naming the
// first non-finite term.
LossBreakdown total_loss(const LossTerms& terms, const LossWeights& w, std::size_t batch_index = 0);

}  // namespace tfl::heads
