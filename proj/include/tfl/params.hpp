#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tfl/autograd.hpp"

namespace tfl {

using ag::Mat;
using Rng = std::mt19937_64;

// Named parameter tensors. Keys are dotted module paths ("pyramid.embed.proj.w"); the
// ordered map gives every traversal (init, optimizer, checkpoint) a fixed order.
class ParamStore {
public:
    void add(const std::string& name, Mat value);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const Mat& at(const std::string& name) const;
    Mat& at(const std::string& name);

    const std::map<std::string, Mat>& tensors() const { return tensors_; }
    std::map<std::string, Mat>& tensors() { return tensors_; }
    std::vector<std::string> names() const;
    std::size_t scalar_count() const;

private:
    std::map<std::string, Mat> tensors_;
};

using Gradients = std::map<std::string, Mat>;

// Binds parameters of a store into one graph as leaves, each name at most once.
class Binder {
public:
    Binder(ag::Graph& graph, const ParamStore& store) : graph_(graph), store_(store) {}

    ag::Var operator()(const std::string& name);
    ag::Graph& graph() const { return graph_; }
    const ParamStore& store() const { return store_; }

    // Gradients of every bound parameter after graph().backward(); zero where nothing flowed.
    Gradients gradients() const;

private:
    ag::Graph& graph_;
    const ParamStore& store_;
    std::unordered_map<std::string, ag::Var> bound_;
};

// Uniform(-bound, bound) with bound = sqrt(6 / (fan_in + fan_out)).
Mat xavier_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, Rng& rng);

}  // namespace tfl
