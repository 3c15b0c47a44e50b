#include "tfl/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tfl/errors.hpp"
#include "tfl/interp.hpp"

namespace tfl::ag {

namespace {

void require_same_shape(Var a, Var b, const char* op) {
    if (a.graph != b.graph) throw ArgumentError(std::string(op) + ": operands belong to different graphs");
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

Var unary(Var x, Mat out, Graph::BackwardFn fn) {
    const Var parents[] = {x};
    return x.graph->push(std::move(out), parents, std::move(fn));
}

double stable_sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Eigen::Index conv_out_len(Eigen::Index len, int kernel, int stride, int padding) {
    const Eigen::Index span = len + 2 * padding - kernel;
    if (span < 0) throw ShapeError("conv1d: input of length " + std::to_string(len) + " shorter than kernel");
    return span / stride + 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

Var Graph::constant(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), false, nullptr});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::leaf(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), true, nullptr});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::push(Mat value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[p.id].needs_grad;
    nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(fn) : nullptr});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::accumulate(Var v, const Mat& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Graph::backward(Var scalar) {
    if (scalar.rows() != 1 || scalar.cols() != 1) throw ShapeError("backward: output must be 1x1");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[scalar.id].grad = Mat::Ones(1, 1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.size() == 0) continue;
        n.backward(*this, n.value, n.grad);
    }
}

// ---------------------------------------------------------------------------
// elementwise and linear algebra

Var matmul(Var a, Var b, bool ta, bool tb) {
    if (a.graph != b.graph) throw ArgumentError("matmul: operands belong to different graphs");
    const Mat& A = a.value();
    const Mat& B = b.value();
    const auto inner_a = ta ? A.rows() : A.cols();
    const auto inner_b = tb ? B.cols() : B.rows();
    if (inner_a != inner_b) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(inner_a) + " and " +
                         std::to_string(inner_b) + " differ");
    }
    Mat out;
    if (!ta && !tb) out.noalias() = A * B;
    else if (ta && !tb) out.noalias() = A.transpose() * B;
    else if (!ta && tb) out.noalias() = A * B.transpose();
    else out.noalias() = A.transpose() * B.transpose();

    const Var parents[] = {a, b};
    return a.graph->push(std::move(out), parents, [a, b, ta, tb](Graph& g, const Mat&, const Mat& d) {
        const Mat& A = g.value(a);
        const Mat& B = g.value(b);
        if (g.requires_grad(a)) {
            Mat da;
            if (!ta) {
                if (tb) da.noalias() = d * B;
                else da.noalias() = d * B.transpose();
            } else {
                if (tb) da.noalias() = B.transpose() * d.transpose();
                else da.noalias() = B * d.transpose();
            }
            g.accumulate(a, da);
        }
        if (g.requires_grad(b)) {
            Mat db;
            if (!tb) {
                if (ta) db.noalias() = A * d;
                else db.noalias() = A.transpose() * d;
            } else {
                if (ta) db.noalias() = d.transpose() * A.transpose();
                else db.noalias() = d.transpose() * A;
            }
            g.accumulate(b, db);
        }
    });
}

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    const Var parents[] = {a, b};
    return a.graph->push(a.value() + b.value(), parents, [a, b](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(a, d);
        g.accumulate(b, d);
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    const Var parents[] = {a, b};
    return a.graph->push(a.value() - b.value(), parents, [a, b](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(a, d);
        g.accumulate(b, -d);
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    const Var parents[] = {a, b};
    Mat out = a.value().cwiseProduct(b.value());
    return a.graph->push(std::move(out), parents, [a, b](Graph& g, const Mat&, const Mat& d) {
        if (g.requires_grad(a)) g.accumulate(a, d.cwiseProduct(g.value(b)));
        if (g.requires_grad(b)) g.accumulate(b, d.cwiseProduct(g.value(a)));
    });
}

Var scale(Var a, double s) {
    return unary(a, a.value() * s, [a, s](Graph& g, const Mat&, const Mat& d) { g.accumulate(a, d * s); });
}

Var add_bias(Var x, Var bias) {
    if (bias.rows() != x.rows() || bias.cols() != 1) {
        throw ShapeError("add_bias: bias must be " + std::to_string(x.rows()) + "x1");
    }
    Mat out = x.value();
    out.colwise() += bias.value().col(0);
    const Var parents[] = {x, bias};
    return x.graph->push(std::move(out), parents, [x, bias](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(x, d);
        if (g.requires_grad(bias)) g.accumulate(bias, d.rowwise().sum());
    });
}

Var relu(Var x) {
    Mat out = x.value().cwiseMax(0.0);
    return unary(x, std::move(out), [x](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(x, (g.value(x).array() > 0.0).select(d, 0.0));
    });
}

Var leaky_relu(Var x, double slope) {
    Mat out = (x.value().array() > 0.0).select(x.value(), x.value() * slope);
    return unary(x, std::move(out), [x, slope](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(x, (g.value(x).array() > 0.0).select(d, d * slope));
    });
}

Var gelu(Var x) {
    const Mat& v = x.value();
    Mat out = v.unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2)); });
    return unary(x, std::move(out), [x](Graph& g, const Mat&, const Mat& d) {
        Mat local = g.value(x).unaryExpr([](double z) {
            return 0.5 * (1.0 + std::erf(z * M_SQRT1_2)) + z * std::exp(-0.5 * z * z) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
        });
        g.accumulate(x, d.cwiseProduct(local));
    });
}

Var sigmoid(Var x) {
    Mat out = x.value().unaryExpr(&stable_sigmoid);
    return unary(x, std::move(out), [x](Graph& g, const Mat& y, const Mat& d) {
        g.accumulate(x, d.array() * y.array() * (1.0 - y.array()));
    });
}

Var softplus(Var x) {
    Mat out = x.value().unaryExpr([](double z) {
        return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    });
    return unary(x, std::move(out), [x](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(x, d.cwiseProduct(g.value(x).unaryExpr(&stable_sigmoid)));
    });
}

Var abs(Var x) {
    return unary(x, x.value().cwiseAbs(), [x](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(x, d.cwiseProduct(g.value(x).unaryExpr([](double z) {
            return static_cast<double>((z > 0) - (z < 0));
        })));
    });
}

Var sum(Var x) {
    Mat out(1, 1);
    out(0, 0) = x.value().sum();
    return unary(x, std::move(out), [x](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(x, Mat::Constant(g.value(x).rows(), g.value(x).cols(), d(0, 0)));
    });
}

Var mean(Var x) {
    const auto n = static_cast<double>(x.value().size());
    if (n == 0) throw ShapeError("mean: empty input");
    return scale(sum(x), 1.0 / n);
}

Var mean_cols(Var x) {
    const auto cols = x.cols();
    if (cols == 0) throw ShapeError("mean_cols: empty input");
    Mat out = x.value().rowwise().mean();
    return unary(x, std::move(out), [x, cols](Graph& g, const Mat&, const Mat& d) {
        Mat gx(d.rows(), cols);
        gx.colwise() = d.col(0) / static_cast<double>(cols);
        g.accumulate(x, gx);
    });
}

Var softmax_rows(Var x) {
    Mat out = x.value();
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
    return unary(x, std::move(out), [x](Graph& g, const Mat& y, const Mat& d) {
        Mat gx = y.cwiseProduct(d);
        const Eigen::VectorXd dots = gx.rowwise().sum();
        gx.noalias() -= y.cwiseProduct(dots.replicate(1, y.cols()));
        g.accumulate(x, gx);
    });
}

Var layer_norm_cols(Var x, Var gamma, Var beta, double eps) {
    const Mat& v = x.value();
    const auto rows = v.rows();
    if (gamma.rows() != rows || gamma.cols() != 1 || beta.rows() != rows || beta.cols() != 1) {
        throw ShapeError("layer_norm_cols: affine parameters must be " + std::to_string(rows) + "x1");
    }
    const Eigen::RowVectorXd mu = v.colwise().mean();
    Mat centered = v.rowwise() - mu;
    const Eigen::RowVectorXd var = centered.cwiseAbs2().colwise().mean();
    const Eigen::RowVectorXd inv = (var.array() + eps).rsqrt().matrix();
    Mat normed = centered.array().rowwise() * inv.array();
    Mat out = (normed.array().colwise() * gamma.value().col(0).array()).matrix();
    out.colwise() += beta.value().col(0);

    const Var parents[] = {x, gamma, beta};
    return x.graph->push(std::move(out), parents,
                         [x, gamma, beta, normed = std::move(normed), inv](Graph& g, const Mat&, const Mat& d) {
        if (g.requires_grad(gamma)) g.accumulate(gamma, d.cwiseProduct(normed).rowwise().sum());
        if (g.requires_grad(beta)) g.accumulate(beta, d.rowwise().sum());
        if (g.requires_grad(x)) {
            Mat dn = d.array().colwise() * g.value(gamma).col(0).array();
            const Eigen::RowVectorXd m1 = dn.colwise().mean();
            const Eigen::RowVectorXd m2 = dn.cwiseProduct(normed).colwise().mean();
            Mat gx = dn.rowwise() - m1;
            gx -= (normed.array().rowwise() * m2.array()).matrix();
            gx = (gx.array().rowwise() * inv.array()).matrix();
            g.accumulate(x, gx);
        }
    });
}

Var instance_norm_rows(Var x, double eps) {
    const Mat& v = x.value();
    const Eigen::VectorXd mu = v.rowwise().mean();
    Mat centered = v.colwise() - mu;
    const Eigen::VectorXd var = centered.cwiseAbs2().rowwise().mean();
    const Eigen::VectorXd inv = (var.array() + eps).rsqrt().matrix();
    Mat out = centered.array().colwise() * inv.array();
    return unary(x, std::move(out), [x, inv](Graph& g, const Mat& y, const Mat& d) {
        const Eigen::VectorXd m1 = d.rowwise().mean();
        const Eigen::VectorXd m2 = d.cwiseProduct(y).rowwise().mean();
        Mat gx = d.colwise() - m1;
        gx -= (y.array().colwise() * m2.array()).matrix();
        gx = (gx.array().colwise() * inv.array()).matrix();
        g.accumulate(x, gx);
    });
}

// ---------------------------------------------------------------------------
// convolutions

Var conv1d(Var x, Var weight, Var bias, int kernel, int stride, int padding) {
    const Mat& v = x.value();
    const auto cin = v.rows();
    const auto len = v.cols();
    const auto cout = weight.rows();
    if (weight.cols() != cin * kernel) {
        throw ShapeError("conv1d: weight expects " + std::to_string(weight.cols() / kernel) +
                         " input channels, got " + std::to_string(cin));
    }
    if (bias.rows() != cout || bias.cols() != 1) throw ShapeError("conv1d: bias shape");
    const auto out_len = conv_out_len(len, kernel, stride, padding);

    Mat col = Mat::Zero(cin * kernel, out_len);
    for (Eigen::Index c = 0; c < cin; ++c) {
        for (int j = 0; j < kernel; ++j) {
            auto dst = col.row(c * kernel + j);
            for (Eigen::Index t = 0; t < out_len; ++t) {
                const Eigen::Index src = t * stride - padding + j;
                if (src >= 0 && src < len) dst(t) = v(c, src);
            }
        }
    }
    Mat out;
    out.noalias() = weight.value() * col;
    out.colwise() += bias.value().col(0);

    const Var parents[] = {x, weight, bias};
    return x.graph->push(std::move(out), parents,
                         [x, weight, bias, col = std::move(col), kernel, stride, padding, cin, len](
                             Graph& g, const Mat&, const Mat& d) {
        if (g.requires_grad(weight)) {
            Mat dw;
            dw.noalias() = d * col.transpose();
            g.accumulate(weight, dw);
        }
        if (g.requires_grad(bias)) g.accumulate(bias, d.rowwise().sum());
        if (g.requires_grad(x)) {
            Mat dcol;
            dcol.noalias() = g.value(weight).transpose() * d;
            Mat gx = Mat::Zero(cin, len);
            const auto out_len = d.cols();
            for (Eigen::Index c = 0; c < cin; ++c) {
                for (int j = 0; j < kernel; ++j) {
                    const auto srcrow = dcol.row(c * kernel + j);
                    for (Eigen::Index t = 0; t < out_len; ++t) {
                        const Eigen::Index dst = t * stride - padding + j;
                        if (dst >= 0 && dst < len) gx(c, dst) += srcrow(t);
                    }
                }
            }
            g.accumulate(x, gx);
        }
    });
}

Var conv1d_depthwise(Var x, Var weight, Var bias, int kernel, int stride, int padding) {
    const Mat& v = x.value();
    const auto ch = v.rows();
    const auto len = v.cols();
    if (weight.rows() != ch || weight.cols() != kernel) throw ShapeError("conv1d_depthwise: weight shape");
    if (bias.rows() != ch || bias.cols() != 1) throw ShapeError("conv1d_depthwise: bias shape");
    const auto out_len = conv_out_len(len, kernel, stride, padding);

    const Mat& w = weight.value();
    Mat out(ch, out_len);
    for (Eigen::Index c = 0; c < ch; ++c) {
        for (Eigen::Index t = 0; t < out_len; ++t) {
            double acc = bias.value()(c, 0);
            for (int j = 0; j < kernel; ++j) {
                const Eigen::Index src = t * stride - padding + j;
                if (src >= 0 && src < len) acc += w(c, j) * v(c, src);
            }
            out(c, t) = acc;
        }
    }
    const Var parents[] = {x, weight, bias};
    return x.graph->push(std::move(out), parents,
                         [x, weight, bias, kernel, stride, padding](Graph& g, const Mat&, const Mat& d) {
        const Mat& v = g.value(x);
        const Mat& w = g.value(weight);
        const auto ch = v.rows();
        const auto len = v.cols();
        const bool want_x = g.requires_grad(x);
        const bool want_w = g.requires_grad(weight);
        Mat gx = Mat::Zero(ch, len);
        Mat gw = Mat::Zero(ch, kernel);
        for (Eigen::Index c = 0; c < ch; ++c) {
            for (Eigen::Index t = 0; t < d.cols(); ++t) {
                const double dt = d(c, t);
                for (int j = 0; j < kernel; ++j) {
                    const Eigen::Index src = t * stride - padding + j;
                    if (src < 0 || src >= len) continue;
                    if (want_x) gx(c, src) += w(c, j) * dt;
                    if (want_w) gw(c, j) += v(c, src) * dt;
                }
            }
        }
        if (want_x) g.accumulate(x, gx);
        if (want_w) g.accumulate(weight, gw);
        if (g.requires_grad(bias)) g.accumulate(bias, d.rowwise().sum());
    });
}

Var conv_transpose1d(Var x, Var weight, Var bias, int kernel, int stride, int padding, int output_padding) {
    const Mat& v = x.value();
    const auto cin = v.rows();
    const auto len = v.cols();
    if (weight.rows() != cin) throw ShapeError("conv_transpose1d: weight expects other input channel count");
    if (weight.cols() % kernel != 0) throw ShapeError("conv_transpose1d: weight columns not a multiple of kernel");
    const auto cout = weight.cols() / kernel;
    if (bias.rows() != cout || bias.cols() != 1) throw ShapeError("conv_transpose1d: bias shape");
    const Eigen::Index out_len = (len - 1) * stride - 2 * padding + kernel + output_padding;
    if (out_len <= 0) throw ShapeError("conv_transpose1d: empty output");

    Mat cols;
    cols.noalias() = weight.value().transpose() * v;  // (cout * kernel) x len
    Mat out = Mat::Zero(cout, out_len);
    for (Eigen::Index o = 0; o < cout; ++o) {
        for (int j = 0; j < kernel; ++j) {
            const auto src = cols.row(o * kernel + j);
            for (Eigen::Index t = 0; t < len; ++t) {
                const Eigen::Index dst = t * stride - padding + j;
                if (dst >= 0 && dst < out_len) out(o, dst) += src(t);
            }
        }
    }
    out.colwise() += bias.value().col(0);

    const Var parents[] = {x, weight, bias};
    return x.graph->push(std::move(out), parents,
                         [x, weight, bias, kernel, stride, padding, cout, len](Graph& g, const Mat&, const Mat& d) {
        const auto out_len = d.cols();
        Mat dcols = Mat::Zero(cout * kernel, len);
        for (Eigen::Index o = 0; o < cout; ++o) {
            for (int j = 0; j < kernel; ++j) {
                auto dst = dcols.row(o * kernel + j);
                for (Eigen::Index t = 0; t < len; ++t) {
                    const Eigen::Index src = t * stride - padding + j;
                    if (src >= 0 && src < out_len) dst(t) = d(o, src);
                }
            }
        }
        if (g.requires_grad(x)) {
            Mat gx;
            gx.noalias() = g.value(weight) * dcols;
            g.accumulate(x, gx);
        }
        if (g.requires_grad(weight)) {
            Mat gw;
            gw.noalias() = g.value(x) * dcols.transpose();
            g.accumulate(weight, gw);
        }
        if (g.requires_grad(bias)) g.accumulate(bias, d.rowwise().sum());
    });
}

// ---------------------------------------------------------------------------
// shape

Var resample_cols(Var x, Eigen::Index out_len) {
    const Mat& v = x.value();
    const auto len = v.cols();
    if (out_len <= 0) throw ShapeError("resample_cols: output length must be positive");
    if (out_len == len) {
        return unary(x, v, [x](Graph& g, const Mat&, const Mat& d) { g.accumulate(x, d); });
    }
    auto taps = linear_taps(static_cast<std::size_t>(len), static_cast<std::size_t>(out_len));
    Mat out(v.rows(), out_len);
    for (Eigen::Index j = 0; j < out_len; ++j) {
        const auto& tap = taps[static_cast<std::size_t>(j)];
        const auto l = static_cast<Eigen::Index>(tap.left);
        if (len == 1) {
            out.col(j) = v.col(0);
        } else {
            out.col(j) = (1.0 - tap.weight) * v.col(l) + tap.weight * v.col(l + 1);
        }
    }
    return unary(x, std::move(out), [x, taps = std::move(taps), len](Graph& g, const Mat&, const Mat& d) {
        Mat gx = Mat::Zero(d.rows(), len);
        for (Eigen::Index j = 0; j < d.cols(); ++j) {
            const auto& tap = taps[static_cast<std::size_t>(j)];
            const auto l = static_cast<Eigen::Index>(tap.left);
            if (len == 1) {
                gx.col(0) += d.col(j);
            } else {
                gx.col(l) += (1.0 - tap.weight) * d.col(j);
                gx.col(l + 1) += tap.weight * d.col(j);
            }
        }
        g.accumulate(x, gx);
    });
}

Var slice_rows(Var x, Eigen::Index first, Eigen::Index count) {
    if (first < 0 || count <= 0 || first + count > x.rows()) throw ShapeError("slice_rows: range out of bounds");
    Mat out = x.value().middleRows(first, count);
    return unary(x, std::move(out), [x, first, count](Graph& g, const Mat&, const Mat& d) {
        Mat gx = Mat::Zero(g.value(x).rows(), g.value(x).cols());
        gx.middleRows(first, count) = d;
        g.accumulate(x, gx);
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Eigen::Index rows = 0;
    const auto cols = parts[0].cols();
    for (const Var& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += p.rows();
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return parts[0].graph->push(std::move(out), parts, [saved](Graph& g, const Mat&, const Mat& d) {
        Eigen::Index at = 0;
        for (const Var& p : saved) {
            const auto r = g.value(p).rows();
            if (g.requires_grad(p)) g.accumulate(p, d.middleRows(at, r));
            at += r;
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Eigen::Index cols = 0;
    const auto rows = parts[0].rows();
    for (const Var& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += p.cols();
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return parts[0].graph->push(std::move(out), parts, [saved](Graph& g, const Mat&, const Mat& d) {
        Eigen::Index at = 0;
        for (const Var& p : saved) {
            const auto c = g.value(p).cols();
            if (g.requires_grad(p)) g.accumulate(p, d.middleCols(at, c));
            at += c;
        }
    });
}

// ---------------------------------------------------------------------------
// losses

Var focal_loss_logits(Var logits, const Mat& labels, double alpha, double gamma, double eps) {
    const Mat& z = logits.value();
    if (labels.rows() != z.rows() || labels.cols() != z.cols()) throw ShapeError("focal_loss_logits: label shape");
    const auto n = z.size();
    Mat local_grad(z.rows(), z.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sign = labels(i) > 0.5 ? 1.0 : -1.0;
        const double q = stable_sigmoid(sign * z(i));
        const double qc = std::clamp(q, eps, 1.0 - eps);
        const double weight = std::pow(1.0 - qc, gamma);
        total += -alpha * weight * std::log(qc);
        if (q != qc) {
            local_grad(i) = 0.0;
        } else {
            local_grad(i) = sign * alpha * weight * (gamma * q * std::log(q) - (1.0 - q));
        }
    }
    Mat out(1, 1);
    out(0, 0) = total;
    return unary(logits, std::move(out), [logits, local_grad = std::move(local_grad)](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(logits, local_grad * d(0, 0));
    });
}

Var iou_loss(Var pred, const Mat& target, const Mat& mask) {
    const Mat& p = pred.value();
    if (p.rows() != 2 || target.rows() != 2 || target.cols() != p.cols() || mask.size() != p.cols()) {
        throw ShapeError("iou_loss: expects 2xN predictions, targets and N mask entries");
    }
    Mat local_grad = Mat::Zero(2, p.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.cols(); ++i) {
        if (mask(i) == 0.0) continue;
        const double ps = p(0, i), pe = p(1, i), ts = target(0, i), te = target(1, i);
        const double inter = std::min(ps, ts) + std::min(pe, te);
        const double uni = std::max(ps, ts) + std::max(pe, te);
        if (uni <= 1e-12) continue;
        total += 1.0 - inter / uni;
        // d(1 - inter/uni) for each predicted distance
        auto partial = [&](double pv, double tv) {
            const double dmin = pv < tv ? 1.0 : 0.0;
            const double dmax = 1.0 - dmin;
            return -(dmin * uni - inter * dmax) / (uni * uni);
        };
        local_grad(0, i) = partial(ps, ts);
        local_grad(1, i) = partial(pe, te);
    }
    Mat out(1, 1);
    out(0, 0) = total;
    return unary(pred, std::move(out), [pred, local_grad = std::move(local_grad)](Graph& g, const Mat&, const Mat& d) {
        g.accumulate(pred, local_grad * d(0, 0));
    });
}

}  // namespace tfl::ag
