#include "tfl/recon_attention.hpp"

#include <algorithm>
#include <cmath>

#include "tfl/errors.hpp"

namespace tfl::recon {

using nlohmann::json;

void DcaeConfig::validate() const {
    if (input_channels < 1) throw ConfigError("dcae: input_channels must be positive");
    if (num_levels < 1) throw ConfigError("dcae: num_levels must be at least 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("dcae: kernel_size must be odd");
    if (!(negative_slope >= 0.0)) throw ConfigError("dcae: negative_slope must be non-negative");
    if (!(norm_eps > 0.0)) throw ConfigError("dcae: norm_eps must be positive");
}

void CraConfig::validate(int input_channels) const {
    if (num_heads < 1) throw ConfigError("cra: num_heads must be at least 1");
    if (dim(input_channels) % num_heads != 0) {
        throw ConfigError("cra: model_dim " + std::to_string(dim(input_channels)) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
    }
    if (ffn_hidden_dim < 1) throw ConfigError("cra: ffn_hidden_dim must be positive");
}

TfaaConfig tfaa_config_from_json(const json& j, int input_channels) {
    TfaaConfig c;
    c.dcae.input_channels = input_channels;
    try {
        c.dcae.latent_channels = j.value("latent_channels", c.dcae.latent_channels);
        c.dcae.num_levels = j.value("num_levels", c.dcae.num_levels);
        c.dcae.kernel_size = j.value("kernel_size", c.dcae.kernel_size);
        c.dcae.negative_slope = j.value("negative_slope", c.dcae.negative_slope);
        c.dcae.norm_eps = j.value("norm_eps", c.dcae.norm_eps);
        c.cra.model_dim = j.value("model_dim", c.cra.model_dim);
        c.cra.num_heads = j.value("num_heads", c.cra.num_heads);
        c.cra.ffn_hidden_dim = j.value("ffn_hidden_dim", c.cra.ffn_hidden_dim);
        c.cra.scale_channels = j.value("scale_channels", c.cra.scale_channels);
        c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("tfaa config: ") + e.what());
    }
    c.dcae.validate();
    c.cra.validate(input_channels);
    return c;
}

json to_json(const TfaaConfig& c) {
    return {{"latent_channels", c.dcae.latent_channels}, {"num_levels", c.dcae.num_levels},
            {"kernel_size", c.dcae.kernel_size},         {"negative_slope", c.dcae.negative_slope},
            {"norm_eps", c.dcae.norm_eps},               {"model_dim", c.cra.model_dim},
            {"num_heads", c.cra.num_heads},              {"ffn_hidden_dim", c.cra.ffn_hidden_dim},
            {"scale_channels", c.cra.scale_channels},    {"classifier_hidden", c.classifier_hidden}};
}

// ---------------------------------------------------------------------------
// autoencoder

Dcae::Dcae(DcaeConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) { cfg_.validate(); }

void Dcae::init(ParamStore& store, Rng& rng) const {
    const int cz = cfg_.latent();
    for (int l = 0; l < cfg_.num_levels; ++l) {
        nn::Conv1d{prefix_ + ".enc" + std::to_string(l), l == 0 ? cfg_.input_channels : cz, cz, cfg_.kernel_size, 2}
            .init(store, rng);
    }
    for (int l = 0; l < cfg_.num_levels; ++l) {
        const int out = l + 1 == cfg_.num_levels ? cfg_.input_channels : cz;
        nn::ConvTranspose1d{prefix_ + ".dec" + std::to_string(l), cz, out, cfg_.kernel_size, 2}.init(store, rng);
    }
}

Var Dcae::encode(Binder& bind, Var x) const {
    const auto factor = Eigen::Index{1} << cfg_.num_levels;
    if (x.rows() != cfg_.input_channels) {
        throw ShapeError("dcae: expected " + std::to_string(cfg_.input_channels) + " channels, got " +
                         std::to_string(x.rows()));
    }
    if (x.cols() % factor != 0) {
        throw ShapeError("dcae: temporal length " + std::to_string(x.cols()) + " not divisible by " +
                         std::to_string(factor));
    }
    const int cz = cfg_.latent();
    for (int l = 0; l < cfg_.num_levels; ++l) {
        x = nn::Conv1d{prefix_ + ".enc" + std::to_string(l), l == 0 ? cfg_.input_channels : cz, cz, cfg_.kernel_size,
                       2}(bind, x);
        x = ag::leaky_relu(x, cfg_.negative_slope);
        if (l + 1 < cfg_.num_levels) x = ag::instance_norm_rows(x, cfg_.norm_eps);
    }
    return x;
}

Var Dcae::decode(Binder& bind, Var z) const {
    const int cz = cfg_.latent();
    if (z.rows() != cz) {
        throw ShapeError("dcae: latent has " + std::to_string(z.rows()) + " channels, expected " + std::to_string(cz));
    }
    for (int l = 0; l < cfg_.num_levels; ++l) {
        const bool last = l + 1 == cfg_.num_levels;
        z = nn::ConvTranspose1d{prefix_ + ".dec" + std::to_string(l), cz, last ? cfg_.input_channels : cz,
                                cfg_.kernel_size, 2}(bind, z);
        if (!last) z = ag::instance_norm_rows(ag::leaky_relu(z, cfg_.negative_slope), cfg_.norm_eps);
    }
    return z;
}

SampleClassifier::SampleClassifier(int latent_channels, int hidden, std::string prefix)
    : latent_(latent_channels), hidden_(hidden), prefix_(std::move(prefix)) {
    if (hidden_ < 1) throw ConfigError("sample classifier: hidden width must be positive");
}

void SampleClassifier::init(ParamStore& store, Rng& rng) const {
    nn::Linear{prefix_ + ".fc1", latent_, hidden_}.init(store, rng);
    nn::Linear{prefix_ + ".fc2", hidden_, 1}.init(store, rng);
}

Var SampleClassifier::logit(Binder& bind, Var latent) const {
    if (latent.rows() != latent_) throw ShapeError("sample classifier: latent channel mismatch");
    Var pooled = ag::mean_cols(latent);
    Var h = ag::relu(nn::Linear{prefix_ + ".fc1", latent_, hidden_}(bind, pooled));
    return nn::Linear{prefix_ + ".fc2", hidden_, 1}(bind, h);
}

// ---------------------------------------------------------------------------
// losses

Var reconstruction_error(Var features, Var reconstruction) {
    return ag::mean(ag::abs(ag::sub(reconstruction, features)));
}

Var reconstruction_loss(std::span<const Var> features, std::span<const Var> reconstructions,
                        const std::vector<bool>& real_mask) {
    if (features.size() != reconstructions.size() || features.size() != real_mask.size() || features.empty()) {
        throw ShapeError("reconstruction_loss: batch sizes differ or batch is empty");
    }
    ag::Graph& g = *features[0].graph;
    const auto real = std::count(real_mask.begin(), real_mask.end(), true);
    if (real == 0) return g.constant(Mat::Zero(1, 1));
    Var total = g.constant(Mat::Zero(1, 1));
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (real_mask[i]) total = ag::add(total, reconstruction_error(features[i], reconstructions[i]));
    }
    return ag::scale(total, 1.0 / static_cast<double>(real));
}

double sample_focal_loss(double p_tampered, int label, double alpha, double gamma, double eps) {
    const double p = std::clamp(p_tampered, eps, 1.0 - eps);
    const double p_true = label == 1 ? p : 1.0 - p;
    return -alpha * std::pow(1.0 - p_true, gamma) * std::log(p_true);
}

Var cra_attention(Var q, Var k, Var v, int channel_dim) {
    if (channel_dim <= 0) throw ArgumentError("cra_attention: channel count must be positive");
    if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() || q.cols() != v.cols()) {
        throw ShapeError("cra_attention: query, key and value must share one D x T shape");
    }
    return nn::attention(q, k, v, 1, 1.0 / std::sqrt(static_cast<double>(channel_dim)));
}

// ---------------------------------------------------------------------------
// transformer block

CraTransBlock::CraTransBlock(int input_channels, CraConfig cfg, std::string prefix)
    : input_channels_(input_channels), cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate(input_channels_);
}

void CraTransBlock::init(ParamStore& store, Rng& rng) const {
    const int d = output_dim();
    nn::Linear{prefix_ + ".in_proj", input_channels_, d}.init(store, rng);
    nn::LayerNorm{prefix_ + ".ln_q", d}.init(store);
    nn::LayerNorm{prefix_ + ".ln_k", d}.init(store);
    nn::Linear{prefix_ + ".wq", d, d}.init(store, rng);
    nn::Linear{prefix_ + ".wk", d, d}.init(store, rng);
    nn::Linear{prefix_ + ".wv", d, d}.init(store, rng);
    nn::LayerNorm{prefix_ + ".ln_out", d}.init(store);
    nn::FeedForward{prefix_ + ".ffn", d, cfg_.ffn_hidden_dim}.init(store, rng);
}

Var CraTransBlock::operator()(Binder& bind, Var features, Var reconstruction) const {
    if (features.rows() != reconstruction.rows() || features.cols() != reconstruction.cols()) {
        throw ShapeError("cratrans: features and reconstruction differ in shape");
    }
    if (features.rows() != input_channels_) throw ShapeError("cratrans: input channel mismatch");
    const int d = output_dim();
    // A shared learned projection precedes every normalization: per-position layer norm over raw
    // channels would cancel any offset common to all channels.
    const nn::Linear proj{prefix_ + ".in_proj", input_channels_, d};
    features = proj(bind, features);
    reconstruction = proj(bind, reconstruction);
    Var pe = bind.graph().constant(nn::sinusoidal_encoding(d, features.cols()));
    Var orig = ag::add(features, pe);
    Var recon = ag::add(reconstruction, pe);

    Var orig_n = nn::LayerNorm{prefix_ + ".ln_q", d}(bind, orig);
    Var recon_n = nn::LayerNorm{prefix_ + ".ln_k", d}(bind, recon);
    Var q = nn::Linear{prefix_ + ".wq", d, d}(bind, orig_n);
    Var k = nn::Linear{prefix_ + ".wk", d, d}(bind, recon_n);
    Var v = nn::Linear{prefix_ + ".wv", d, d}(bind, orig_n);

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.scale_c(input_channels_)));
    Var enhanced = nn::attention(q, k, v, cfg_.num_heads, scale);
    Var y = nn::LayerNorm{prefix_ + ".ln_out", d}(bind, ag::add(orig, enhanced));
    return ag::add(y, nn::FeedForward{prefix_ + ".ffn", d, cfg_.ffn_hidden_dim}(bind, y));
}

// ---------------------------------------------------------------------------

TfaaModule::TfaaModule(TfaaConfig cfg)
    : cfg_(cfg),
      dcae_(cfg.dcae),
      classifier_(cfg.dcae.latent(), cfg.classifier_hidden),
      cra_(cfg.dcae.input_channels, cfg.cra) {}

void TfaaModule::init(ParamStore& store, Rng& rng) const {
    dcae_.init(store, rng);
    classifier_.init(store, rng);
    cra_.init(store, rng);
}

TfaaOutput TfaaModule::operator()(Binder& bind, Var features) const {
    TfaaOutput out;
    out.latent = dcae_.encode(bind, features);
    out.reconstruction = dcae_.decode(bind, out.latent);
    out.sample_logit = classifier_.logit(bind, out.latent);
    out.enhanced = cra_(bind, features, out.reconstruction);
    return out;
}

}  // namespace tfl::recon
