#pragma once

// Shared helpers for the test binaries: random matrices, scratch directories and a central
// finite-difference gradient checker over both parameters and inputs.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tfl/autograd.hpp"
#include "tfl/params.hpp"

namespace testing {

using tfl::Mat;
using tfl::ag::Var;

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("tfl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct GradReport {
    double max_rel_error = 0.0;
    int probes = 0;
    std::string worst;
};

// Builds a scalar from bound parameters and leaf inputs.
using ScalarFn = std::function<Var(tfl::Binder&, const std::vector<Var>&)>;

// |analytic - numeric| / max(|analytic|, |numeric|, floor) at `probes` random coordinates,
// spread over inputs and parameters (parameters only when the store is non-empty).
inline GradReport check_gradients(tfl::ParamStore& store, std::vector<Mat>& inputs, const ScalarFn& fn, int probes,
                                  std::mt19937_64& rng, double h = 1e-6, double floor = 1e-4) {
    auto evaluate = [&]() {
        tfl::ag::Graph g;
        tfl::Binder bind(g, store);
        std::vector<Var> leaves;
        for (const auto& x : inputs) leaves.push_back(g.constant(x));
        return fn(bind, leaves).value()(0, 0);
    };

    tfl::ag::Graph g;
    tfl::Binder bind(g, store);
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(g.leaf(x));
    Var out = fn(bind, leaves);
    g.backward(out);
    const auto param_grads = bind.gradients();
    std::vector<Mat> input_grads;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Mat& gr = g.grad(leaves[i]);
        input_grads.push_back(gr.size() ? gr : Mat::Zero(inputs[i].rows(), inputs[i].cols()));
    }
    std::vector<std::string> names;
    for (const auto& [name, m] : param_grads) names.push_back(name);

    GradReport rep;
    for (int k = 0; k < probes; ++k) {
        const bool use_param = !names.empty() && (inputs.empty() || k % 2 == 0);
        double* slot = nullptr;
        double analytic = 0.0;
        std::string label;
        if (use_param) {
            const auto& name = names[std::uniform_int_distribution<std::size_t>(0, names.size() - 1)(rng)];
            Mat& p = store.at(name);
            const auto idx = std::uniform_int_distribution<Eigen::Index>(0, p.size() - 1)(rng);
            slot = p.data() + idx;
            analytic = param_grads.at(name).data()[idx];
            label = name + "[" + std::to_string(idx) + "]";
        } else {
            const auto which = std::uniform_int_distribution<std::size_t>(0, inputs.size() - 1)(rng);
            const auto idx = std::uniform_int_distribution<Eigen::Index>(0, inputs[which].size() - 1)(rng);
            slot = inputs[which].data() + idx;
            analytic = input_grads[which].data()[idx];
            label = "input" + std::to_string(which) + "[" + std::to_string(idx) + "]";
        }
        const double saved = *slot;
        *slot = saved + h;
        const double up = evaluate();
        *slot = saved - h;
        const double down = evaluate();
        *slot = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
        if (rel > rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst = label + " analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric);
        }
        ++rep.probes;
    }
    return rep;
}

// Scalar projection <out, w> with a fixed random weight, so every output entry matters.
inline Var project(Var out, const Mat& w) { return tfl::ag::sum(tfl::ag::mul(out, out.graph->constant(w))); }

}  // namespace testing
