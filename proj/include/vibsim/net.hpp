#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vibsim/common.hpp"
#include "vibsim/graph.hpp"
#include "vibsim/tensor.hpp"

namespace vibsim::nn {

inline Tensor glorot_uniform(int rows, int cols, Rng& rng) {
    double a = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor t(rows, cols);
    for (double& x : t.data) x = dist(rng);
    return t;
}

// Fully-connected net with tanh hidden activations and a linear output layer.
struct DenseNet {
    std::vector<Parameter> weights;
    std::vector<Parameter> biases;

    static DenseNet make(int in_dim, const std::vector<int>& hidden, int out_dim,
                         Rng& rng, const std::string& id_prefix) {
        DenseNet net;
        std::vector<int> dims;
        dims.push_back(in_dim);
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(out_dim);
        for (std::size_t li = 0; li + 1 < dims.size(); ++li) {
            std::string tag = id_prefix + ".l" + std::to_string(li);
            net.weights.emplace_back(tag + ".w", glorot_uniform(dims[li], dims[li + 1], rng));
            net.biases.emplace_back(tag + ".b", Tensor(1, dims[li + 1]));
        }
        return net;
    }

    int in_dim() const { return weights.front().value.rows; }
    int out_dim() const { return weights.back().value.cols; }

    Graph::Var forward(Graph& g, Graph::Var x) {
        Graph::Var h = x;
        for (std::size_t li = 0; li < weights.size(); ++li) {
            h = g.affine(h, g.param(weights[li]), g.param(biases[li]));
            if (li + 1 < weights.size()) h = g.tanh_(h);
        }
        return h;
    }

    // Inference path without a tape.
    Tensor apply(const Tensor& x) const {
        if (x.cols != in_dim()) throw UsageError("DenseNet::apply: input width mismatch");
        Tensor h = x;
        for (std::size_t li = 0; li < weights.size(); ++li) {
            const Tensor& w = weights[li].value;
            const Tensor& b = biases[li].value;
            Tensor y(h.rows, w.cols);
            for (int i = 0; i < h.rows; ++i) {
                for (int j = 0; j < w.cols; ++j) y.at(i, j) = b.data[j];
                for (int k = 0; k < h.cols; ++k) {
                    double hv = h.at(i, k);
                    if (hv == 0.0) continue;
                    for (int j = 0; j < w.cols; ++j) y.at(i, j) += hv * w.at(k, j);
                }
            }
            if (li + 1 < weights.size()) {
                for (double& v : y.data) v = std::tanh(v);
            }
            h = std::move(y);
        }
        return h;
    }

    std::vector<double> apply_row(const std::vector<double>& x) const {
        Tensor out = apply(Tensor(1, static_cast<int>(x.size()), x));
        return out.data;
    }

    std::vector<Parameter*> params() {
        std::vector<Parameter*> ps;
        for (std::size_t li = 0; li < weights.size(); ++li) {
            ps.push_back(&weights[li]);
            ps.push_back(&biases[li]);
        }
        return ps;
    }
};

}  // namespace vibsim::nn
