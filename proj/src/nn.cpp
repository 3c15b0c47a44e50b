#include "tfl/nn.hpp"

#include <cmath>
#include <vector>

#include "tfl/errors.hpp"

namespace tfl::nn {

void Linear::init(ParamStore& store, Rng& rng) const {
    store.add(name + ".w", xavier_uniform(out, in, in, out, rng));
    store.add(name + ".b", Mat::Zero(out, 1));
}

Var Linear::operator()(Binder& bind, Var x) const {
    return ag::add_bias(ag::matmul(bind(name + ".w"), x), bind(name + ".b"));
}

void Conv1d::init(ParamStore& store, Rng& rng) const {
    store.add(name + ".w", xavier_uniform(out, in * kernel, in * kernel, out * kernel, rng));
    if (bias) store.add(name + ".b", Mat::Zero(out, 1));
}

Var Conv1d::operator()(Binder& bind, Var x) const {
    Var b = bias ? bind(name + ".b") : bind.graph().constant(Mat::Zero(out, 1));
    return ag::conv1d(x, bind(name + ".w"), b, kernel, stride, kernel / 2);
}

void ConvTranspose1d::init(ParamStore& store, Rng& rng) const {
    store.add(name + ".w", xavier_uniform(in, out * kernel, in * kernel, out * kernel, rng));
    store.add(name + ".b", Mat::Zero(out, 1));
}

Var ConvTranspose1d::operator()(Binder& bind, Var x) const {
    // padding k/2 and output padding stride - 1 for odd kernels gives stride * T
    const int padding = kernel / 2;
    const int output_padding = stride - 1 - (kernel - 1 - 2 * padding);
    return ag::conv_transpose1d(x, bind(name + ".w"), bind(name + ".b"), kernel, stride, padding, output_padding);
}

void DepthwiseConv::init(ParamStore& store, Rng& /*rng*/) const {
    Mat w(channels, 3);
    // starts as a [1 2 1] / 4 smoothing subsampler
    w.col(0).setConstant(0.25);
    w.col(1).setConstant(0.5);
    w.col(2).setConstant(0.25);
    store.add(name + ".w", std::move(w));
    store.add(name + ".b", Mat::Zero(channels, 1));
}

Var DepthwiseConv::operator()(Binder& bind, Var x) const {
    return ag::conv1d_depthwise(x, bind(name + ".w"), bind(name + ".b"), 3, stride, 1);
}

void LayerNorm::init(ParamStore& store) const {
    store.add(name + ".g", Mat::Ones(dim, 1));
    store.add(name + ".b", Mat::Zero(dim, 1));
}

Var LayerNorm::operator()(Binder& bind, Var x) const {
    return ag::layer_norm_cols(x, bind(name + ".g"), bind(name + ".b"));
}

void FeedForward::init(ParamStore& store, Rng& rng) const {
    Linear{name + ".fc1", dim, hidden}.init(store, rng);
    Linear{name + ".fc2", hidden, dim}.init(store, rng);
}

Var FeedForward::operator()(Binder& bind, Var x) const {
    Var h = ag::gelu(Linear{name + ".fc1", dim, hidden}(bind, x));
    return Linear{name + ".fc2", hidden, dim}(bind, h);
}

Var attention(Var q, Var k, Var v, int heads, double scale) {
    if (heads < 1 || q.rows() % heads != 0) throw ConfigError("attention: channel count not divisible by heads");
    if (k.rows() != q.rows() || v.rows() != q.rows() || k.cols() != v.cols()) {
        throw ShapeError("attention: query/key/value shapes disagree");
    }
    ag::Graph& g = *q.graph;
    auto head = [&](Var qh, Var kh, Var vh) {
        Var weights = ag::softmax_rows(ag::scale(ag::matmul(qh, kh, true, false), scale));
        g.note_attention(weights);
        return ag::matmul(vh, weights, false, true);
    };
    if (heads == 1) return head(q, k, v);

    const auto width = q.rows() / heads;
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        outs.push_back(head(ag::slice_rows(q, h * width, width), ag::slice_rows(k, h * width, width),
                            ag::slice_rows(v, h * width, width)));
    }
    return ag::concat_rows(outs);
}

void TransformerBlock::init(ParamStore& store, Rng& rng) const {
    if (dim % heads != 0) throw ConfigError(name + ": model dim not divisible by head count");
    LayerNorm{name + ".ln1", dim}.init(store);
    LayerNorm{name + ".ln2", dim}.init(store);
    if (stride > 1) {
        DepthwiseConv{name + ".qconv", dim, stride}.init(store, rng);
        DepthwiseConv{name + ".resconv", dim, stride}.init(store, rng);
    }
    Linear{name + ".q", dim, dim}.init(store, rng);
    Linear{name + ".k", dim, dim}.init(store, rng);
    Linear{name + ".v", dim, dim}.init(store, rng);
    Linear{name + ".o", dim, dim}.init(store, rng);
    FeedForward{name + ".ffn", dim, ffn_hidden}.init(store, rng);
}

Var TransformerBlock::operator()(Binder& bind, Var x) const {
    if (x.rows() != dim) throw ShapeError(name + ": expected " + std::to_string(dim) + " channels");
    if (stride > 1 && x.cols() % stride != 0) {
        throw ShapeError(name + ": temporal length " + std::to_string(x.cols()) + " not divisible by stride");
    }
    Var h = LayerNorm{name + ".ln1", dim}(bind, x);
    Var query_in = h;
    Var residual = x;
    if (stride > 1) {
        query_in = DepthwiseConv{name + ".qconv", dim, stride}(bind, h);
        residual = DepthwiseConv{name + ".resconv", dim, stride}(bind, x);
    }
    Var q = Linear{name + ".q", dim, dim}(bind, query_in);
    Var k = Linear{name + ".k", dim, dim}(bind, h);
    Var v = Linear{name + ".v", dim, dim}(bind, h);
    Var mixed = attention(q, k, v, heads, 1.0 / std::sqrt(static_cast<double>(dim / heads)));
    Var y = ag::add(residual, Linear{name + ".o", dim, dim}(bind, mixed));
    Var ff = FeedForward{name + ".ffn", dim, ffn_hidden}(bind, LayerNorm{name + ".ln2", dim}(bind, y));
    return ag::add(y, ff);
}

Mat sinusoidal_encoding(Eigen::Index dim, Eigen::Index length) {
    Mat pe(dim, length);
    for (Eigen::Index i = 0; i < dim; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
        for (Eigen::Index t = 0; t < length; ++t) {
            const double angle = static_cast<double>(t) * freq;
            pe(i, t) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

}  // namespace tfl::nn
