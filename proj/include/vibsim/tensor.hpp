#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vibsim/common.hpp"

namespace vibsim::nn {

// Dense row-major matrix of doubles. Vectors are 1xN or Nx1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
    Tensor(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != static_cast<std::size_t>(r) * c) {
            throw UsageError("Tensor: value count does not match shape");
        }
    }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }

    static Tensor full(int r, int c, double v) {
        Tensor t(r, c);
        for (double& x : t.data) x = v;
        return t;
    }

    static Tensor row(std::vector<double> values) {
        int n = static_cast<int>(values.size());
        return Tensor(1, n, std::move(values));
    }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    int size() const { return rows * cols; }

    bool same_shape(const Tensor& other) const {
        return rows == other.rows && cols == other.cols;
    }

    void fill(double v) {
        for (double& x : data) x = v;
    }
};

// A trainable value: the optimizer reads grad and writes value.
// Gradients accumulate across backward passes until zero_grad().
struct Parameter {
    std::string id;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string name, Tensor init)
        : id(std::move(name)), value(std::move(init)), grad(value.rows, value.cols) {}

    void zero_grad() { grad.fill(0.0); }
};

}  // namespace vibsim::nn
