#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfl/autograd.hpp"
#include "tfl/nn.hpp"
#include "tfl/params.hpp"

namespace tfl::pyramid {

using ag::Var;

enum class PyramidMode { hierarchical, fpn, pca_fpn };

std::string to_string(PyramidMode m);
PyramidMode mode_from_string(const std::string& s);

struct PyramidConfig {
    int input_dim = 0;
    int model_dim = 32;
    int num_levels = 5;
    int num_heads = 4;
    int ffn_hidden_dim = 64;
    PyramidMode mode = PyramidMode::pca_fpn;

    void validate() const;
    // Base lengths must be divisible by this.
    Eigen::Index length_multiple() const { return Eigen::Index{1} << (num_levels - 1); }
};

PyramidConfig pyramid_config_from_json(const nlohmann::json& j, int input_dim);
nlohmann::json to_json(const PyramidConfig& cfg);

struct PyramidFeatures {
    std::vector<Var> levels;  // level l: model_dim x T / 2^l
    std::vector<int> strides;  // 2^l
};

// Cross-attention between feature maps of different lengths. Queries come from q_src, keys
// and values from kv_src; each goes through layer norm and a learned projection, keys and
// values are then linearly resampled to the query length, and the scaled (1/sqrt(D)) row
// softmax mixes value columns. Output D x T_q.
struct CrossAttention {
    std::string name;
    int dim = 0;

    void init(ParamStore& store, Rng& rng) const;
    Var operator()(Binder& bind, Var q_src, Var kv_src) const;
};

class Pyramid {
public:
    explicit Pyramid(PyramidConfig cfg, std::string prefix = "pyramid");

    void init(ParamStore& store, Rng& rng) const;

    // input_dim x T -> D x T: projection, ReLU, one full-resolution transformer block.
    Var embed(Binder& bind, Var x) const;
    // Level l -> l + 1 with a stride-2 transformer block; T_l must be even.
    Var downsample(Binder& bind, Var x, int level) const;

    PyramidFeatures operator()(Binder& bind, Var x) const;

    // Raw encoder outputs P_0^in .. P_{L-1}^in.
    PyramidFeatures hierarchical(Binder& bind, Var x) const;
    // Top-down additive fusion of the raw encoder outputs.
    PyramidFeatures fpn_baseline(Binder& bind, Var x) const;
    // Parallel full-resolution branch refined by cross-attention against every new level,
    // then top-down fusion of {P_{L-1}^pl, P_1^in, .., P_{L-1}^in}.
    PyramidFeatures pca_fpn(Binder& bind, Var x) const;

    const PyramidConfig& config() const { return cfg_; }

private:
    void check_input(Var x) const;
    std::vector<Var> encoder_chain(Binder& bind, Var x) const;
    PyramidFeatures top_down(Binder& bind, std::vector<Var> bases) const;
    std::string name(const std::string& leaf) const { return prefix_ + "." + leaf; }

    PyramidConfig cfg_;
    std::string prefix_;
};

}  // namespace tfl::pyramid
