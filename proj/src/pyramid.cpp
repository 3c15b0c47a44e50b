#include "tfl/pyramid.hpp"

#include <cmath>

#include "tfl/errors.hpp"

namespace tfl::pyramid {

using nlohmann::json;

std::string to_string(PyramidMode m) {
    switch (m) {
        case PyramidMode::hierarchical: return "hierarchical";
        case PyramidMode::fpn: return "fpn";
        case PyramidMode::pca_fpn: return "pca_fpn";
    }
    return "unknown";
}

PyramidMode mode_from_string(const std::string& s) {
    if (s == "hierarchical") return PyramidMode::hierarchical;
    if (s == "fpn") return PyramidMode::fpn;
    if (s == "pca_fpn") return PyramidMode::pca_fpn;
    throw ConfigError("unknown pyramid mode '" + s + "'");
}

void PyramidConfig::validate() const {
    if (input_dim < 1) throw ConfigError("pyramid: input_dim must be positive");
    if (model_dim < 1) throw ConfigError("pyramid: model_dim must be positive");
    if (num_levels < 2) throw ConfigError("pyramid: num_levels must be at least 2");
    if (num_heads < 1 || model_dim % num_heads != 0) throw ConfigError("pyramid: model_dim not divisible by num_heads");
    if (ffn_hidden_dim < 1) throw ConfigError("pyramid: ffn_hidden_dim must be positive");
}

PyramidConfig pyramid_config_from_json(const json& j, int input_dim) {
    PyramidConfig c;
    c.input_dim = input_dim;
    try {
        c.model_dim = j.value("model_dim", c.model_dim);
        c.num_levels = j.value("num_levels", c.num_levels);
        c.num_heads = j.value("num_heads", c.num_heads);
        c.ffn_hidden_dim = j.value("ffn_hidden_dim", c.ffn_hidden_dim);
        if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("pyramid config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const PyramidConfig& c) {
    return {{"model_dim", c.model_dim},
            {"num_levels", c.num_levels},
            {"num_heads", c.num_heads},
            {"ffn_hidden_dim", c.ffn_hidden_dim},
            {"mode", to_string(c.mode)}};
}

// ---------------------------------------------------------------------------

void CrossAttention::init(ParamStore& store, Rng& rng) const {
    nn::LayerNorm{name + ".ln_q", dim}.init(store);
    nn::LayerNorm{name + ".ln_kv", dim}.init(store);
    nn::Linear{name + ".wq", dim, dim}.init(store, rng);
    nn::Linear{name + ".wk", dim, dim}.init(store, rng);
    nn::Linear{name + ".wv", dim, dim}.init(store, rng);
}

Var CrossAttention::operator()(Binder& bind, Var q_src, Var kv_src) const {
    if (q_src.rows() != dim || kv_src.rows() != dim) {
        throw ShapeError(name + ": expected " + std::to_string(dim) + " channels");
    }
    Var kv_n = nn::LayerNorm{name + ".ln_kv", dim}(bind, kv_src);
    Var q = nn::Linear{name + ".wq", dim, dim}(bind, nn::LayerNorm{name + ".ln_q", dim}(bind, q_src));
    Var k = nn::Linear{name + ".wk", dim, dim}(bind, kv_n);
    Var v = nn::Linear{name + ".wv", dim, dim}(bind, kv_n);
    k = ag::resample_cols(k, q.cols());
    v = ag::resample_cols(v, q.cols());
    return nn::attention(q, k, v, 1, 1.0 / std::sqrt(static_cast<double>(dim)));
}

// ---------------------------------------------------------------------------

Pyramid::Pyramid(PyramidConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) { cfg_.validate(); }

void Pyramid::init(ParamStore& store, Rng& rng) const {
    const int d = cfg_.model_dim;
    nn::Conv1d{name("embed.proj"), cfg_.input_dim, d, 3, 1}.init(store, rng);
    nn::TransformerBlock{name("embed.block"), d, cfg_.num_heads, cfg_.ffn_hidden_dim, 1}.init(store, rng);
    for (int l = 0; l + 1 < cfg_.num_levels; ++l) {
        nn::TransformerBlock{name("down" + std::to_string(l)), d, cfg_.num_heads, cfg_.ffn_hidden_dim, 2}.init(store, rng);
    }
    if (cfg_.mode == PyramidMode::pca_fpn) {
        for (int l = 1; l < cfg_.num_levels; ++l) CrossAttention{name("ca_pl" + std::to_string(l)), d}.init(store, rng);
        for (int l = 1; l + 1 < cfg_.num_levels; ++l) CrossAttention{name("ca_dn" + std::to_string(l)), d}.init(store, rng);
    }
    if (cfg_.mode != PyramidMode::hierarchical) {
        for (int l = 0; l < cfg_.num_levels; ++l) nn::Linear{name("fpn.out" + std::to_string(l)), d, d}.init(store, rng);
    }
}

void Pyramid::check_input(Var x) const {
    if (x.rows() != cfg_.input_dim) {
        throw ShapeError("pyramid: expected " + std::to_string(cfg_.input_dim) + " input channels, got " +
                         std::to_string(x.rows()));
    }
    if (x.cols() % cfg_.length_multiple() != 0) {
        throw ShapeError("pyramid: temporal length " + std::to_string(x.cols()) + " not divisible by " +
                         std::to_string(cfg_.length_multiple()));
    }
}

Var Pyramid::embed(Binder& bind, Var x) const {
    if (x.rows() != cfg_.input_dim) throw ShapeError("pyramid embed: input channel mismatch");
    Var h = ag::relu(nn::Conv1d{name("embed.proj"), cfg_.input_dim, cfg_.model_dim, 3, 1}(bind, x));
    return nn::TransformerBlock{name("embed.block"), cfg_.model_dim, cfg_.num_heads, cfg_.ffn_hidden_dim, 1}(bind, h);
}

Var Pyramid::downsample(Binder& bind, Var x, int level) const {
    if (x.cols() % 2 != 0) throw ShapeError("pyramid downsample: odd temporal length " + std::to_string(x.cols()));
    return nn::TransformerBlock{name("down" + std::to_string(level)), cfg_.model_dim, cfg_.num_heads,
                                cfg_.ffn_hidden_dim, 2}(bind, x);
}

std::vector<Var> Pyramid::encoder_chain(Binder& bind, Var x) const {
    std::vector<Var> levels{embed(bind, x)};
    for (int l = 0; l + 1 < cfg_.num_levels; ++l) levels.push_back(downsample(bind, levels.back(), l));
    return levels;
}

PyramidFeatures Pyramid::top_down(Binder& bind, std::vector<Var> bases) const {
    const auto n = bases.size();
    std::vector<Var> merged(n, bases.back());
    for (std::size_t l = n - 1; l-- > 0;) {
        merged[l] = ag::add(bases[l], ag::resample_cols(merged[l + 1], bases[l].cols()));
    }
    PyramidFeatures out;
    for (std::size_t l = 0; l < n; ++l) {
        out.levels.push_back(nn::Linear{name("fpn.out" + std::to_string(l)), cfg_.model_dim, cfg_.model_dim}(bind, merged[l]));
        out.strides.push_back(1 << l);
    }
    return out;
}

PyramidFeatures Pyramid::hierarchical(Binder& bind, Var x) const {
    check_input(x);
    PyramidFeatures out;
    out.levels = encoder_chain(bind, x);
    for (int l = 0; l < cfg_.num_levels; ++l) out.strides.push_back(1 << l);
    return out;
}

PyramidFeatures Pyramid::fpn_baseline(Binder& bind, Var x) const {
    check_input(x);
    return top_down(bind, encoder_chain(bind, x));
}

PyramidFeatures Pyramid::pca_fpn(Binder& bind, Var x) const {
    check_input(x);
    const int d = cfg_.model_dim;
    std::vector<Var> encoded{embed(bind, x)};
    encoded.push_back(downsample(bind, encoded[0], 0));
    // parallel full-resolution branch, refined against each new level
    Var parallel = ag::add(encoded[0], CrossAttention{name("ca_pl1"), d}(bind, encoded[0], encoded[1]));
    for (int l = 1; l + 1 < cfg_.num_levels; ++l) {
        Var mixed = ag::add(encoded[static_cast<std::size_t>(l)],
                            CrossAttention{name("ca_dn" + std::to_string(l)), d}(bind, encoded[static_cast<std::size_t>(l)], parallel));
        encoded.push_back(downsample(bind, mixed, l));
        parallel = ag::add(parallel, CrossAttention{name("ca_pl" + std::to_string(l + 1)), d}(bind, parallel, encoded.back()));
    }
    std::vector<Var> bases = encoded;
    bases[0] = parallel;
    return top_down(bind, std::move(bases));
}

PyramidFeatures Pyramid::operator()(Binder& bind, Var x) const {
    switch (cfg_.mode) {
        case PyramidMode::hierarchical: return hierarchical(bind, x);
        case PyramidMode::fpn: return fpn_baseline(bind, x);
        case PyramidMode::pca_fpn: return pca_fpn(bind, x);
    }
    throw ConfigError("pyramid: unknown mode");
}

}  // namespace tfl::pyramid
