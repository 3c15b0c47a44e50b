#include "tfl/params.hpp"

#include <cmath>

#include "tfl/errors.hpp"

namespace tfl {

void ParamStore::add(const std::string& name, Mat value) {
    if (!tensors_.emplace(name, std::move(value)).second) {
        throw ConfigError("parameter '" + name + "' registered twice");
    }
}

const Mat& ParamStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

Mat& ParamStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors_) n += static_cast<std::size_t>(m.size());
    return n;
}

ag::Var Binder::operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    ag::Var v = graph_.leaf(store_.at(name));
    bound_.emplace(name, v);
    return v;
}

Gradients Binder::gradients() const {
    Gradients out;
    for (const auto& [name, v] : bound_) {
        const Mat& g = graph_.grad(v);
        if (g.size() == 0) {
            out.emplace(name, Mat::Zero(v.rows(), v.cols()));
        } else {
            out.emplace(name, g);
        }
    }
    return out;
}

Mat xavier_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat m(rows, cols);
    // explicit loop keeps the draw order row-major regardless of Eigen internals
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

}  // namespace tfl
