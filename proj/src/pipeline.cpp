#include "tfl/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include "tfl/errors.hpp"

namespace tfl::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be positive");
    if (epochs < 1) throw ConfigError("optimizer: epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("optimizer: batch_size must be at least 1");
    if (warmup_epochs < 0) throw ConfigError("optimizer: warmup_epochs must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: betas outside [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be non-negative");
    if (!(clip_norm > 0.0)) throw ConfigError("optimizer: clip_norm must be positive");
}

void PostprocessConfig::validate() const {
    if (!(nms_sigma > 0.0)) throw ConfigError("postprocess: nms_sigma must be positive");
    if (!(min_score >= 0.0 && min_score < 1.0)) throw ConfigError("postprocess: min_score outside [0, 1)");
    if (max_segments < 1) throw ConfigError("postprocess: max_segments must be positive");
    protocol.validate();
}

fs::path RunConfig::resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

void RunConfig::validate(bool check_paths) const {
    if (check_paths) {
        if (train_manifest.empty()) throw ConfigError("data.train is required");
        for (const auto* p : {&train_manifest, &val_manifest, &test_manifest}) {
            if (!p->empty() && !fs::exists(resolve(*p))) throw ConfigError("manifest not found: " + resolve(*p).string());
        }
    }
    heads.validate();
    loss.validate();
    optimizer.validate();
    postprocess.validate();
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir, bool check_paths) {
    RunConfig c;
    c.base_dir = base_dir;
    try {
        if (!j.is_object()) throw ConfigError("run config must be a JSON object");
        const json data = j.value("data", json::object());
        c.train_manifest = data.value("train", "");
        c.val_manifest = data.value("val", "");
        c.test_manifest = data.value("test", "");
        c.tfaa = j.value("tfaa", json::object());
        c.pyramid = j.value("pyramid", json::object());
        c.heads = heads::head_config_from_json(j.value("heads", json::object()));
        c.loss = heads::loss_weights_from_json(j.value("loss", json::object()));

        const json opt = j.value("optimizer", json::object());
        c.optimizer.learning_rate = opt.value("learning_rate", c.optimizer.learning_rate);
        c.optimizer.epochs = opt.value("epochs", c.optimizer.epochs);
        c.optimizer.batch_size = opt.value("batch_size", c.optimizer.batch_size);
        c.optimizer.warmup_epochs = opt.value("warmup_epochs", c.optimizer.warmup_epochs);
        c.optimizer.beta1 = opt.value("beta1", c.optimizer.beta1);
        c.optimizer.beta2 = opt.value("beta2", c.optimizer.beta2);
        c.optimizer.eps = opt.value("eps", c.optimizer.eps);
        c.optimizer.weight_decay = opt.value("weight_decay", c.optimizer.weight_decay);
        c.optimizer.clip_norm = opt.value("clip_norm", c.optimizer.clip_norm);

        const json post = j.value("postprocess", json::object());
        c.postprocess.nms_sigma = post.value("nms_sigma", c.postprocess.nms_sigma);
        c.postprocess.min_score = post.value("min_score", c.postprocess.min_score);
        c.postprocess.max_segments = post.value("max_segments", c.postprocess.max_segments);
        c.postprocess.protocol = eval::protocol_from_json(post.value("protocol", json::object()));

        if (c.pyramid.contains("mode")) c.pyramid_mode = pyramid::mode_from_string(c.pyramid.at("mode").get<std::string>());
        const json abl = j.value("ablation", json::object());
        c.use_tfaa = abl.value("use_tfaa", c.use_tfaa);
        if (abl.contains("pyramid_mode")) c.pyramid_mode = pyramid::mode_from_string(abl.at("pyramid_mode").get<std::string>());
        c.pyramid["mode"] = pyramid::to_string(c.pyramid_mode);

        const json aug = j.value("augment", json::object());
        c.augment.channel_shuffle = aug.value("channel_shuffle", c.augment.channel_shuffle);

        c.seed = j.value("seed", c.seed);
        c.output_dir = j.value("output_dir", c.output_dir);
        c.threads = j.value("threads", c.threads);
        c.eval_every = j.value("eval_every", c.eval_every);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    c.validate(check_paths);
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open run config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("run config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j, fs::absolute(path).parent_path());
}

json to_json(const RunConfig& c) {
    json pyr = c.pyramid;
    pyr["mode"] = pyramid::to_string(c.pyramid_mode);
    return {{"data", {{"train", c.train_manifest}, {"val", c.val_manifest}, {"test", c.test_manifest}}},
            {"base_dir", c.base_dir.string()},
            {"tfaa", c.tfaa},
            {"pyramid", pyr},
            {"heads", heads::to_json(c.heads)},
            {"loss", heads::to_json(c.loss)},
            {"optimizer",
             {{"learning_rate", c.optimizer.learning_rate},
              {"epochs", c.optimizer.epochs},
              {"batch_size", c.optimizer.batch_size},
              {"warmup_epochs", c.optimizer.warmup_epochs},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps},
              {"weight_decay", c.optimizer.weight_decay},
              {"clip_norm", c.optimizer.clip_norm}}},
            {"postprocess",
             {{"nms_sigma", c.postprocess.nms_sigma},
              {"min_score", c.postprocess.min_score},
              {"max_segments", c.postprocess.max_segments},
              {"protocol", eval::to_json(c.postprocess.protocol)}}},
            {"augment", {{"channel_shuffle", c.augment.channel_shuffle}}},
            {"ablation", {{"use_tfaa", c.use_tfaa}, {"pyramid_mode", pyramid::to_string(c.pyramid_mode)}}},
            {"seed", c.seed},
            {"output_dir", c.output_dir},
            {"threads", c.threads},
            {"eval_every", c.eval_every}};
}

static RunConfig run_config_from_snapshot(const json& j) {
    // manifests may have moved since training; the model sections must still load
    return run_config_from_json(j, j.value("base_dir", std::string(".")), false);
}

ModelConfig model_config(const RunConfig& cfg, int input_channels) {
    if (input_channels < 1) throw ConfigError("model: input channel count must be positive");
    ModelConfig m;
    m.input_channels = input_channels;
    m.use_tfaa = cfg.use_tfaa;
    m.tfaa = recon::tfaa_config_from_json(cfg.tfaa, input_channels);
    const int pyramid_in = cfg.use_tfaa ? m.tfaa.cra.dim(input_channels) : input_channels;
    json pyr = cfg.pyramid;
    pyr["mode"] = pyramid::to_string(cfg.pyramid_mode);
    m.pyramid = pyramid::pyramid_config_from_json(pyr, pyramid_in);
    m.heads = cfg.heads;
    if (m.heads.range_starts.size() != static_cast<std::size_t>(m.pyramid.num_levels)) {
        throw ConfigError("heads: " + std::to_string(m.heads.range_starts.size()) + " regression ranges for " +
                          std::to_string(m.pyramid.num_levels) + " pyramid levels");
    }
    return m;
}

// ---------------------------------------------------------------------------
// model

Model::Model(ModelConfig cfg)
    : cfg_(cfg), pyramid_(cfg.pyramid), heads_(cfg.heads, cfg.pyramid.model_dim) {
    if (cfg_.use_tfaa) tfaa_.emplace(cfg_.tfaa);
}

void Model::init(ParamStore& store, std::uint64_t seed) const {
    // independent streams per module so toggling one module leaves the others' draws intact
    auto stream = [seed](std::uint64_t module) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(module)};
        return Rng(seq);
    };
    if (tfaa_) {
        Rng rng = stream(1);
        tfaa_->init(store, rng);
    }
    Rng prng = stream(2);
    pyramid_.init(store, prng);
    Rng hrng = stream(3);
    heads_.init(store, hrng);
}

Eigen::Index Model::length_multiple() const {
    Eigen::Index m = cfg_.pyramid.length_multiple();
    if (cfg_.use_tfaa) m = std::lcm(m, Eigen::Index{1} << cfg_.tfaa.dcae.num_levels);
    return m;
}

std::vector<Eigen::Index> Model::level_lengths(Eigen::Index length) const {
    std::vector<Eigen::Index> out;
    for (int l = 0; l < cfg_.pyramid.num_levels; ++l) out.push_back(length >> l);
    return out;
}

std::vector<int> Model::strides() const {
    std::vector<int> out;
    for (int l = 0; l < cfg_.pyramid.num_levels; ++l) out.push_back(1 << l);
    return out;
}

Model::Output Model::forward(Binder& bind, ag::Var x) const {
    Output out;
    ag::Var h = x;
    if (tfaa_) {
        out.tfaa = (*tfaa_)(bind, x);
        h = out.tfaa->enhanced;
    }
    out.features = pyramid_(bind, h);
    out.cls_logits = heads_.classify_logits(bind, out.features);
    out.distances = heads_.regress(bind, out.features);
    return out;
}

Mat padded_input(const FeatureSequence& seq, Eigen::Index multiple) {
    Mat x = seq.to_matrix();
    const Eigen::Index t = x.cols();
    const Eigen::Index padded = (t + multiple - 1) / multiple * multiple;
    if (padded == t) return x;
    Mat out(x.rows(), padded);
    out.leftCols(t) = x;
    for (Eigen::Index c = t; c < padded; ++c) out.col(c) = x.col(t - 1);
    return out;
}

std::vector<Prediction> Model::predict(const ParamStore& params, const FeatureSequence& seq,
                                       const PostprocessConfig& post) const {
    if (static_cast<int>(seq.channels()) != cfg_.input_channels) {
        throw ShapeError("predict: item " + seq.item_id() + " has " + std::to_string(seq.channels()) +
                         " channels, model expects " + std::to_string(cfg_.input_channels));
    }
    ag::Graph g;
    Binder bind(g, params);
    const Output out = forward(bind, g.constant(padded_input(seq, length_multiple())));
    std::vector<Mat> scores;
    std::vector<Mat> dists;
    for (std::size_t l = 0; l < out.cls_logits.size(); ++l) {
        const Mat& logit = out.cls_logits[l].value();
        scores.push_back((1.0 / (1.0 + (-logit.array()).exp())).matrix());
        dists.push_back(out.distances[l].value());
    }
    auto proposals = heads::decode_proposals(scores, dists, out.features.strides, seq.feature_rate(), seq.duration(),
                                             std::max(cfg_.heads.score_floor, post.min_score));
    return eval::soft_nms(std::move(proposals), post.nms_sigma, post.min_score, post.max_segments);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'T', 'F', 'L', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double d) { write_u64(out, std::bit_cast<std::uint64_t>(d)); }

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    json index = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, m] : ckpt.params.tensors()) {
        index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(m.size());
    }
    const json header{{"config", ckpt.run_config},
                      {"input_channels", ckpt.input_channels},
                      {"epoch", ckpt.epoch},
                      {"history", ckpt.history},
                      {"tensors", index}};
    const std::string text = header.dump();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, 8);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : ckpt.params.tensors()) {
        for (Eigen::Index i = 0; i < m.size(); ++i) write_f64(out, m.data()[i]);
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("checkpoint not found: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto u64_at = [&](std::size_t pos) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
        return v;
    };
    if (bytes.size() < 16) throw FormatError("checkpoint truncated", bytes.size());
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("bad checkpoint magic", 0);
    const std::uint64_t header_len = u64_at(8);
    if (header_len > bytes.size() - 16) throw FormatError("checkpoint header exceeds file", 8);
    json header;
    try {
        header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what(), 16);
    }
    const std::size_t data_start = 16 + header_len;
    Checkpoint ckpt;
    try {
        ckpt.run_config = header.at("config");
        ckpt.input_channels = header.at("input_channels").get<int>();
        ckpt.epoch = header.at("epoch").get<int>();
        ckpt.history = header.at("history");
        for (const auto& t : header.at("tensors")) {
            const auto rows = t.at("rows").get<Eigen::Index>();
            const auto cols = t.at("cols").get<Eigen::Index>();
            const auto off = t.at("offset").get<std::uint64_t>();
            const std::size_t first = data_start + off * 8;
            const std::size_t count = static_cast<std::size_t>(rows * cols);
            if (first + count * 8 > bytes.size()) throw FormatError("checkpoint tensor data truncated", bytes.size());
            Mat m(rows, cols);
            for (std::size_t i = 0; i < count; ++i) m.data()[i] = std::bit_cast<double>(u64_at(first + i * 8));
            ckpt.params.add(t.at("name").get<std::string>(), std::move(m));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what(), 16);
    }
    return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    const RunConfig cfg = run_config_from_snapshot(ckpt.run_config);
    Model model(model_config(cfg, ckpt.input_channels));
    ParamStore expected;
    model.init(expected, 0);
    for (const auto& [name, m] : expected.tensors()) {
        if (!ckpt.params.contains(name)) throw FormatError("checkpoint lacks parameter " + name, 16);
        const Mat& have = ckpt.params.at(name);
        if (have.rows() != m.rows() || have.cols() != m.cols()) {
            throw FormatError("checkpoint parameter " + name + " has the wrong shape", 16);
        }
    }
    if (expected.tensors().size() != ckpt.params.tensors().size()) {
        throw FormatError("checkpoint holds parameters the model does not use", 16);
    }
    return model;
}

// ---------------------------------------------------------------------------
// training

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

namespace {

struct PreparedSample {
    Mat x;
    heads::Targets targets;
    bool is_fake = false;
};

std::vector<PreparedSample> prepare(const Model& model, const std::vector<Sample>& samples) {
    std::vector<PreparedSample> out;
    for (const auto& s : samples) {
        if (static_cast<int>(s.features.channels()) != model.config().input_channels) {
            throw ConfigError("item " + s.features.item_id() + " has " + std::to_string(s.features.channels()) +
                              " channels, expected " + std::to_string(model.config().input_channels));
        }
        if (static_cast<Eigen::Index>(s.features.length()) % model.length_multiple() != 0) {
            throw ConfigError("item " + s.features.item_id() + " length " + std::to_string(s.features.length()) +
                              " is not a multiple of " + std::to_string(model.length_multiple()));
        }
        PreparedSample p;
        p.x = s.features.to_matrix();
        p.targets = heads::assign_targets(s.annotation.segments, model.level_lengths(p.x.cols()), model.strides(),
                                          s.features.feature_rate(), model.config().heads);
        p.is_fake = s.annotation.is_fake;
        out.push_back(std::move(p));
    }
    return out;
}

struct BatchNorms {
    double positives = 1.0;
    std::size_t real_items = 0;
    std::size_t items = 1;
};

struct ItemResult {
    Gradients grads;
    double cls = 0.0, reg = 0.0, rec = 0.0, scls = 0.0, total = 0.0;
};

// Rows of x reordered by a permutation drawn from (seed, epoch, item).
Mat shuffle_channels(const Mat& x, std::uint64_t seed, int epoch, std::size_t item) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(item), 0x5eedu};
    Rng rng(seq);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = x.row(perm[static_cast<std::size_t>(r)]);
    return out;
}

ItemResult item_step(const Model& model, const ParamStore& params, const PreparedSample& s, const Mat& x,
                     const BatchNorms& norms, const heads::LossWeights& w, std::size_t batch_index) {
    ag::Graph g;
    Binder bind(g, params);
    const auto out = model.forward(bind, g.constant(x));
    ag::Var logits = ag::concat_cols(out.cls_logits);
    ag::Var dists = ag::concat_cols(out.distances);

    heads::LossTerms terms;
    terms.cls = heads::classification_loss(logits, s.targets, w, norms.positives);
    terms.reg = heads::regression_loss(dists, s.targets, norms.positives);
    terms.rec = g.constant(Mat::Zero(1, 1));
    terms.scls = g.constant(Mat::Zero(1, 1));
    if (out.tfaa) {
        if (!s.is_fake) {
            terms.rec = ag::scale(recon::reconstruction_error(g.constant(x), out.tfaa->reconstruction),
                                  1.0 / static_cast<double>(norms.real_items));
        }
        const Mat label = Mat::Constant(1, 1, s.is_fake ? 1.0 : 0.0);
        terms.scls = ag::scale(ag::focal_loss_logits(out.tfaa->sample_logit, label, w.focal_alpha, w.focal_gamma, w.focal_eps),
                               1.0 / static_cast<double>(norms.items));
    }
    const auto loss = heads::total_loss(terms, w, batch_index);
    g.backward(loss.total);
    return {bind.gradients(), loss.cls, loss.reg, loss.rec, loss.scls, loss.value};
}

class AdamW {
public:
    AdamW(const OptimizerConfig& cfg, const ParamStore& params) : cfg_(cfg) {
        for (const auto& [name, m] : params.tensors()) {
            m_[name] = Mat::Zero(m.rows(), m.cols());
            v_[name] = Mat::Zero(m.rows(), m.cols());
        }
    }

    void step(ParamStore& params, const Gradients& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, p] : params.tensors()) {
            const auto it = grads.find(name);
            if (it == grads.end()) continue;
            const Mat& g = it->second;
            Mat& m = m_.at(name);
            Mat& v = v_.at(name);
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = (cfg_.beta2 * v.array() + (1.0 - cfg_.beta2) * g.array().square()).matrix();
            // decoupled weight decay on weight matrices only
            if (name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0) p *= 1.0 - lr * cfg_.weight_decay;
            p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
        }
    }

private:
    OptimizerConfig cfg_;
    std::map<std::string, Mat> m_;
    std::map<std::string, Mat> v_;
    long t_ = 0;
};

double learning_rate(const OptimizerConfig& cfg, std::size_t step, std::size_t steps_per_epoch) {
    const double total = static_cast<double>(cfg.epochs) * static_cast<double>(steps_per_epoch);
    const double warmup = static_cast<double>(cfg.warmup_epochs) * static_cast<double>(steps_per_epoch);
    const double s = static_cast<double>(step);
    if (s < warmup) return cfg.learning_rate * (s + 1.0) / warmup;
    if (total <= warmup) return cfg.learning_rate;
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * (s - warmup) / (total - warmup)));
}

std::vector<Sample> load_samples(const RunConfig& cfg, Split split) {
    const std::string& path = split == Split::train ? cfg.train_manifest
                              : split == Split::val ? cfg.val_manifest
                                                    : cfg.test_manifest;
    if (path.empty()) throw ConfigError("no manifest configured for split " + to_string(split));
    const fs::path resolved = cfg.resolve(path);
    if (!fs::exists(resolved)) throw ConfigError("manifest not found: " + resolved.string());
    return load_split(resolved);
}

}  // namespace

TrainResult train(const RunConfig& cfg, std::ostream* progress) {
    cfg.validate();
    const auto train_samples = load_samples(cfg, Split::train);
    if (train_samples.empty()) throw ConfigError("training split is empty");
    std::vector<Sample> val_samples;
    if (!cfg.val_manifest.empty()) val_samples = load_samples(cfg, Split::val);

    const int channels = static_cast<int>(train_samples.front().features.channels());
    const Model model(model_config(cfg, channels));
    const auto prepared = prepare(model, train_samples);
    if (!val_samples.empty()) prepare(model, val_samples);  // shape checks only

    ParamStore params;
    model.init(params, cfg.seed);
    AdamW opt(cfg.optimizer, params);

    const fs::path out_dir = cfg.resolve(cfg.output_dir);
    fs::create_directories(out_dir);
    std::ofstream log(out_dir / "train_log.jsonl");
    if (!log) throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());

    const std::size_t n = prepared.size();
    const auto bs = static_cast<std::size_t>(cfg.optimizer.batch_size);
    const std::size_t steps_per_epoch = (n + bs - 1) / bs;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    result.output_dir = out_dir;
    json history = json::array();
    double best_ap = -1.0;
    std::size_t step = 0;
    const json config_snapshot = to_json(cfg);

    for (int epoch = 1; epoch <= cfg.optimizer.epochs; ++epoch) {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(epoch)};
        Rng shuffle_rng(seq);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sum_cls = 0, sum_reg = 0, sum_rec = 0, sum_scls = 0, sum_total = 0;
        double lr = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            const std::size_t first = b * bs;
            const std::size_t last = std::min(n, first + bs);
            BatchNorms norms;
            norms.items = last - first;
            std::size_t positives = 0;
            for (std::size_t i = first; i < last; ++i) {
                positives += prepared[order[i]].targets.num_positive;
                norms.real_items += prepared[order[i]].is_fake ? 0 : 1;
            }
            norms.positives = static_cast<double>(std::max<std::size_t>(positives, 1));

            std::vector<ItemResult> results(last - first);
            parallel_for(last - first, cfg.threads, [&](std::size_t k) {
                const std::size_t item = order[first + k];
                const auto& sample = prepared[item];
                if (cfg.augment.channel_shuffle) {
                    const Mat x = shuffle_channels(sample.x, cfg.seed, epoch, item);
                    results[k] = item_step(model, params, sample, x, norms, cfg.loss, step);
                } else {
                    results[k] = item_step(model, params, sample, sample.x, norms, cfg.loss, step);
                }
            });

            Gradients grads;
            for (auto& r : results) {
                for (auto& [name, g] : r.grads) {
                    auto it = grads.find(name);
                    if (it == grads.end()) grads.emplace(name, std::move(g));
                    else it->second += g;
                }
                sum_cls += r.cls;
                sum_reg += r.reg;
                sum_rec += r.rec;
                sum_scls += r.scls;
                sum_total += r.total;
            }
            double sq = 0.0;
            for (const auto& [name, g] : grads) sq += g.squaredNorm();
            const double norm = std::sqrt(sq);
            if (!std::isfinite(norm)) throw TrainingError("gradient", step, "non-finite gradient norm in batch " + std::to_string(step));
            if (norm > cfg.optimizer.clip_norm) {
                const double f = cfg.optimizer.clip_norm / norm;
                for (auto& [name, g] : grads) g *= f;
            }
            lr = learning_rate(cfg.optimizer, step, steps_per_epoch);
            opt.step(params, grads, lr);
            ++step;
        }

        const double denom = static_cast<double>(steps_per_epoch);
        json entry{{"epoch", epoch},
                   {"lr", lr},
                   {"loss",
                    {{"total", sum_total / denom},
                     {"cls", sum_cls / denom},
                     {"reg", sum_reg / denom},
                     {"rec", sum_rec / denom},
                     {"scls", sum_scls / denom}}}};

        const bool evaluate_now = !val_samples.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.optimizer.epochs);
        bool improved = val_samples.empty();
        if (evaluate_now) {
            const auto ev = evaluate_samples(model, params, val_samples, cfg.postprocess, cfg.threads);
            const double ap = ev.report.ap.count(0.5) ? ev.report.ap.at(0.5) : ev.report.ap.begin()->second;
            entry["val_ap"] = ap;
            if (ap > best_ap) {
                best_ap = ap;
                improved = true;
            }
        }
        history.push_back(entry);
        log << entry.dump() << '\n';
        log.flush();
        if (progress) *progress << entry.dump() << std::endl;

        Checkpoint current{params, config_snapshot, channels, epoch, history};
        if (improved) result.best = current;
        if (epoch == cfg.optimizer.epochs) result.last = std::move(current);
    }
    if (result.best.params.tensors().empty()) result.best = result.last;
    result.best.history = history;
    save_checkpoint(result.best, out_dir / "best.ckpt");
    save_checkpoint(result.last, out_dir / "last.ckpt");
    return result;
}

// ---------------------------------------------------------------------------
// evaluation

EvalResult evaluate_samples(const Model& model, const ParamStore& params, const std::vector<Sample>& samples,
                            const PostprocessConfig& post, int threads, bool oracle) {
    EvalResult out;
    out.predictions.resize(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto& s = samples[i];
        out.predictions[i].item_id = s.features.item_id();
        if (oracle) {
            for (const auto& seg : s.annotation.segments) out.predictions[i].segments.push_back({seg.start, seg.end, 1.0});
        } else {
            out.predictions[i].segments = model.predict(params, s.features, post);
        }
    });
    eval::ItemPreds preds;
    eval::ItemGts gts;
    std::vector<int> labels;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        preds.push_back(out.predictions[i].segments);
        gts.push_back(samples[i].annotation.segments);
        labels.push_back(samples[i].annotation.is_fake ? 1 : 0);
    }
    out.report = eval::evaluate_predictions(preds, gts, labels, post.protocol);
    return out;
}

EvalResult evaluate(const Checkpoint& ckpt, Split split, bool oracle, int threads) {
    const RunConfig cfg = run_config_from_snapshot(ckpt.run_config);
    const Model model = model_from_checkpoint(ckpt);
    const auto samples = load_samples(cfg, split);
    return evaluate_samples(model, ckpt.params, samples, cfg.postprocess, threads > 0 ? threads : cfg.threads, oracle);
}

eval::MetricReport score_dump(const std::vector<ItemPredictions>& dump, const std::vector<SegmentAnnotation>& annos,
                              const eval::EvalProtocol& protocol) {
    std::map<std::string, const ItemPredictions*> by_id;
    for (const auto& d : dump) {
        if (!by_id.emplace(d.item_id, &d).second) throw ValidationError("duplicate item id in predictions: " + d.item_id);
    }
    eval::ItemPreds preds;
    eval::ItemGts gts;
    std::vector<int> labels;
    for (const auto& a : annos) {
        const auto it = by_id.find(a.item_id);
        preds.push_back(it == by_id.end() ? std::vector<Prediction>{} : it->second->segments);
        gts.push_back(a.segments);
        labels.push_back(a.is_fake ? 1 : 0);
    }
    return eval::evaluate_predictions(preds, gts, labels, protocol);
}

}  // namespace tfl::pipeline
