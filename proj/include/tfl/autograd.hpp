#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph is a tape: every operation appends one node holding its value and a closure that
// pushes the node's gradient to its parents. Feature maps use the channels x time layout
// throughout (rows are channels, columns are temporal positions).

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace tfl::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Graph;

struct Var {
    Graph* graph = nullptr;
    std::uint32_t id = 0;

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class Graph {
public:
    // (graph, output value, output gradient)
    using BackwardFn = std::function<void(Graph&, const Mat&, const Mat&)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Mat value);
    Var leaf(Mat value);

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    // Gradient accumulated by backward(); an empty matrix when nothing flowed into v.
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }
    bool requires_grad(Var v) const { return nodes_[v.id].needs_grad; }

    // Seeds d(scalar)/d(scalar) = 1 and propagates to every leaf.
    void backward(Var scalar);

    // Used by operations to append their result.
    Var push(Mat value, std::span<const Var> parents, BackwardFn fn);
    void accumulate(Var v, const Mat& g);

    // Attention matrices are registered so callers can inspect them after a forward pass.
    void note_attention(Var v) { attention_.push_back(v); }
    const std::vector<Var>& attention() const { return attention_; }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool needs_grad = false;
        BackwardFn backward;
    };
    std::deque<Node> nodes_;
    std::vector<Var> attention_;
};

inline const Mat& Var::value() const { return graph->value(*this); }

// ---- elementwise and linear algebra ----
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// x (rows x cols) + bias (rows x 1) broadcast over columns
Var add_bias(Var x, Var bias);

Var relu(Var x);
Var leaky_relu(Var x, double negative_slope);
Var gelu(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var abs(Var x);

Var sum(Var x);
Var mean(Var x);
// rows x cols -> rows x 1
Var mean_cols(Var x);

Var softmax_rows(Var x);

// Normalizes every column over the rows (per temporal position over channels).
Var layer_norm_cols(Var x, Var gamma, Var beta, double eps = 1e-5);
// Normalizes every row over the columns (per channel over time), no affine part.
Var instance_norm_rows(Var x, double eps = 1e-5);

// ---- temporal convolutions ----
// weight: out x (in * kernel), element (o, i * kernel + j). bias: out x 1.
Var conv1d(Var x, Var weight, Var bias, int kernel, int stride, int padding);
// weight: channels x kernel. bias: channels x 1.
Var conv1d_depthwise(Var x, Var weight, Var bias, int kernel, int stride, int padding);
// weight: in x (out * kernel), element (i, o * kernel + j). bias: out x 1.
// Output length (T - 1) * stride - 2 * padding + kernel + output_padding.
Var conv_transpose1d(Var x, Var weight, Var bias, int kernel, int stride, int padding,
                     int output_padding);

// ---- shape ----
// Endpoint-aligned linear resampling along columns.
Var resample_cols(Var x, Eigen::Index out_len);
Var slice_rows(Var x, Eigen::Index first, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

// ---- fused losses (each returns a 1 x 1 sum) ----
// logits: 1 x N; labels in {0, 1}. Per element -alpha * (1 - p_t)^gamma * log(p_t) with p_t the
// probability of the labelled class, clamped to [eps, 1 - eps].
Var focal_loss_logits(Var logits, const Mat& labels, double alpha, double gamma, double eps = 1e-7);
// pred, target: 2 x N distances (start, end) from a shared anchor. Sums 1 - IoU over columns
// where mask is nonzero.
Var iou_loss(Var pred, const Mat& target, const Mat& mask);

}  // namespace tfl::ag
