#pragma once

// The composed detector (optional reconstruction attention -> pyramid -> heads), its run
// configuration, training loop, checkpoints, evaluation and single-item prediction.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfl/data_model.hpp"
#include "tfl/heads.hpp"
#include "tfl/metrics.hpp"
#include "tfl/params.hpp"
#include "tfl/pyramid.hpp"
#include "tfl/recon_attention.hpp"

namespace tfl::pipeline {

struct OptimizerConfig {
    double learning_rate = 1e-3;
    int epochs = 30;
    int batch_size = 8;
    int warmup_epochs = 5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;

    void validate() const;
};

struct PostprocessConfig {
    double nms_sigma = 0.5;
    double min_score = 0.001;
    std::size_t max_segments = 100;
    eval::EvalProtocol protocol;

    void validate() const;
};

struct AugmentConfig {
    // Reorders feature channels per item and epoch. Only meaningful when channels are
    // exchangeable, as in the synthetic corpus.
    bool channel_shuffle = false;
};

struct RunConfig {
    // split manifests; relative paths resolve against base_dir
    std::string train_manifest;
    std::string val_manifest;
    std::string test_manifest;
    std::filesystem::path base_dir = ".";

    // model sections, parsed once the input channel count is known
    nlohmann::json tfaa = nlohmann::json::object();
    nlohmann::json pyramid = nlohmann::json::object();
    heads::HeadConfig heads;

    heads::LossWeights loss;
    OptimizerConfig optimizer;
    PostprocessConfig postprocess;
    AugmentConfig augment;

    bool use_tfaa = true;
    pyramid::PyramidMode pyramid_mode = pyramid::PyramidMode::pca_fpn;

    std::uint64_t seed = 0;
    std::string output_dir = "run";
    int threads = 1;
    int eval_every = 1;

    std::filesystem::path resolve(const std::string& p) const;
    // check_paths: also require the manifests to exist
    void validate(bool check_paths = true) const;
};

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".",
                               bool check_paths = true);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

struct ModelConfig {
    int input_channels = 0;
    bool use_tfaa = true;
    recon::TfaaConfig tfaa;
    pyramid::PyramidConfig pyramid;
    heads::HeadConfig heads;
};

ModelConfig model_config(const RunConfig& cfg, int input_channels);

class Model {
public:
    explicit Model(ModelConfig cfg);

    void init(ParamStore& store, std::uint64_t seed) const;

    struct Output {
        std::optional<recon::TfaaOutput> tfaa;
        pyramid::PyramidFeatures features;
        std::vector<ag::Var> cls_logits;  // per level 1 x T_l
        std::vector<ag::Var> distances;   // per level 2 x T_l, stride units
    };
    Output forward(Binder& bind, ag::Var x) const;

    // Input lengths must be multiples of this.
    Eigen::Index length_multiple() const;
    std::vector<Eigen::Index> level_lengths(Eigen::Index length) const;
    std::vector<int> strides() const;

    // Runs the detector on one item, decodes, applies Soft-NMS. Sorted by score descending.
    std::vector<Prediction> predict(const ParamStore& params, const FeatureSequence& seq,
                                    const PostprocessConfig& post) const;

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    std::optional<recon::TfaaModule> tfaa_;
    pyramid::Pyramid pyramid_;
    heads::Heads heads_;
};

// Feature matrix padded at the end (edge replication) to a multiple of `multiple` columns.
Mat padded_input(const FeatureSequence& seq, Eigen::Index multiple);

struct Checkpoint {
    ParamStore params;
    nlohmann::json run_config;
    int input_channels = 0;
    int epoch = 0;
    nlohmann::json history = nlohmann::json::array();
};

// "TFLCKPT1", u64 header length, JSON header (config, epoch, history, tensor index), then raw
// little-endian doubles in index order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Model model_from_checkpoint(const Checkpoint& ckpt);

struct TrainResult {
    Checkpoint best;
    Checkpoint last;
    std::filesystem::path output_dir;
};

// Per-epoch progress (one JSON object per epoch) goes to `progress` if given, and always to
// <output_dir>/train_log.jsonl. Writes best.ckpt and last.ckpt.
TrainResult train(const RunConfig& cfg, std::ostream* progress = nullptr);

struct EvalResult {
    eval::MetricReport report;
    std::vector<ItemPredictions> predictions;
};

// Predicts every sample (or, with oracle, injects the ground truth as score-1 predictions) and
// scores the result.
EvalResult evaluate_samples(const Model& model, const ParamStore& params, const std::vector<Sample>& samples,
                            const PostprocessConfig& post, int threads, bool oracle = false);

// Evaluates a checkpoint on one split of its run configuration.
EvalResult evaluate(const Checkpoint& ckpt, Split split, bool oracle = false, int threads = 0);

// Scores a prediction dump against annotations (matched by item id).
eval::MetricReport score_dump(const std::vector<ItemPredictions>& dump, const std::vector<SegmentAnnotation>& annos,
                              const eval::EvalProtocol& protocol);

// Runs fn(i) for i in [0, n) on up to `threads` workers (static interleaved assignment).
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace tfl::pipeline
