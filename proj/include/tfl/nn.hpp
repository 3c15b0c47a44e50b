#pragma once

// Building blocks shared by the reconstruction, pyramid and head modules. Every layer is a
// small value type naming its parameters; init() registers them, operator() applies them.

#include <string>

#include "tfl/autograd.hpp"
#include "tfl/params.hpp"

namespace tfl::nn {

using ag::Var;

// Per-position channel projection: W (out x in) * x + b.
struct Linear {
    std::string name;
    int in = 0;
    int out = 0;

    void init(ParamStore& store, Rng& rng) const;
    Var operator()(Binder& bind, Var x) const;
};

struct Conv1d {
    std::string name;
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;
    bool bias = true;

    void init(ParamStore& store, Rng& rng) const;
    Var operator()(Binder& bind, Var x) const;
};

struct ConvTranspose1d {
    std::string name;
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 2;

    void init(ParamStore& store, Rng& rng) const;
    // Output length is exactly stride * input length.
    Var operator()(Binder& bind, Var x) const;
};

// Strided depthwise temporal convolution, kernel 3, padding 1.
struct DepthwiseConv {
    std::string name;
    int channels = 0;
    int stride = 2;

    void init(ParamStore& store, Rng& rng) const;
    Var operator()(Binder& bind, Var x) const;
};

struct LayerNorm {
    std::string name;
    int dim = 0;

    void init(ParamStore& store) const;
    Var operator()(Binder& bind, Var x) const;
};

// Two-layer position-wise network with GELU.
struct FeedForward {
    std::string name;
    int dim = 0;
    int hidden = 0;

    void init(ParamStore& store, Rng& rng) const;
    Var operator()(Binder& bind, Var x) const;
};

// Scaled dot-product attention over feature maps in channels x time layout.
// q: D x Tq, k and v: D x Tk. Rows are split into `heads` equal slices; each head computes
// softmax(q_h^T k_h * scale) row-wise (Tq x Tk, registered with the graph) and mixes value
// columns with it. Output D x Tq.
Var attention(Var q, Var k, Var v, int heads, double scale);

// Pre-norm transformer encoder block. With stride 2 the query and residual paths go through
// strided depthwise convolutions, halving the temporal length.
struct TransformerBlock {
    std::string name;
    int dim = 0;
    int heads = 1;
    int ffn_hidden = 0;
    int stride = 1;

    void init(ParamStore& store, Rng& rng) const;
    Var operator()(Binder& bind, Var x) const;
};

// Fixed sinusoidal positional encoding, dim x length.
Mat sinusoidal_encoding(Eigen::Index dim, Eigen::Index length);

}  // namespace tfl::nn
