#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vibsim {

// Configuration problems: bad dimensions, unknown ids, missing artifacts.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: shape mismatches, out-of-range actions, empty inputs.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during optimization (non-finite loss or gradient).
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// A planning goal with no supporting transition in the dataset.
struct GoalNotRepresentedError : std::runtime_error {
    explicit GoalNotRepresentedError(const std::string& msg) : std::runtime_error(msg) {}
};

using Rng = std::mt19937_64;

// Derives an independent stream from a base seed and a stream tag.
// splitmix64-style mixing so that nearby tags give unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t x = base + 0x9e3779b97f4a7c15ull * (stream + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

constexpr double kLogTwoPi = 1.8378770664093454836;

// Stable log(sum(exp(x_i))) with max subtraction.
inline double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) throw UsageError("log_sum_exp: empty input");
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;  // all -inf, or a +inf dominates
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline double softplus(double x) {
    // log(1 + e^x) without overflow for large |x|
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Inverse of softplus on (0, inf); used when loading serialized variances.
inline double softplus_inverse(double y) {
    if (y <= 0.0) throw UsageError("softplus_inverse: input must be positive");
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log N(x | mean, var) for a scalar coordinate of a diagonal Gaussian.
inline double gaussian_log_pdf(double x, double mean, double var) {
    double diff = x - mean;
    return -0.5 * (kLogTwoPi + std::log(var) + diff * diff / var);
}

// Index of the maximum entry; ties break toward the lowest index.
inline int argmax(std::span<const double> xs) {
    if (xs.empty()) throw UsageError("argmax: empty input");
    int best = 0;
    for (int i = 1; i < static_cast<int>(xs.size()); ++i) {
        if (xs[i] > xs[best]) best = i;
    }
    return best;
}

// In-place softmax with max subtraction; returns nothing, rows sum to 1.
inline void softmax_inplace(std::span<double> xs) {
    if (xs.empty()) throw UsageError("softmax: empty input");
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double s = 0.0;
    for (double& x : xs) {
        x = std::exp(x - m);
        s += x;
    }
    for (double& x : xs) x /= s;
}

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};

// Population-style mean and standard deviation (divisor n).
inline MeanStd mean_std(std::span<const double> xs) {
    if (xs.empty()) throw UsageError("mean_std: empty input");
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    v /= static_cast<double>(xs.size());
    return {m, std::sqrt(v)};
}

struct EigenPairs {
    std::vector<double> values;                // descending, clamped at 0
    std::vector<std::vector<double>> vectors;  // unit length, one per value
};

// Leading eigenpairs of a symmetric PSD matrix by power iteration with
// deflation. Deterministic start vector, so repeated calls agree exactly.
inline EigenPairs top_eigenpairs(std::vector<std::vector<double>> m, int count) {
    int n = static_cast<int>(m.size());
    if (n == 0 || count <= 0) throw UsageError("top_eigenpairs: empty matrix or count");
    for (const auto& row : m) {
        if (static_cast<int>(row.size()) != n) throw UsageError("top_eigenpairs: matrix not square");
    }
    count = std::min(count, n);
    EigenPairs out;
    auto iterate = [&](std::vector<double> v) {
        bool moved = false;
        for (int iter = 0; iter < 500; ++iter) {
            std::vector<double> w(n, 0.0);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) w[i] += m[i][j] * v[j];
            }
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-12) break;  // iterate fell into the null space
            for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
            moved = true;
        }
        return std::pair<std::vector<double>, bool>(std::move(v), moved);
    };
    for (int e = 0; e < count; ++e) {
        auto [v, moved] = iterate(std::vector<double>(n, 1.0 / std::sqrt(static_cast<double>(n))));
        if (!moved) {
            // The uniform start can be exactly orthogonal to the remaining
            // spectrum; retry once from a fixed spread start. If that also
            // dies immediately the residual really is zero.
            std::vector<double> spread(n);
            double norm = 0.0;
            for (int i = 0; i < n; ++i) {
                std::uint64_t bits = derive_seed(0x70e16e5ull + static_cast<std::uint64_t>(e),
                                                 static_cast<std::uint64_t>(i));
                spread[i] = static_cast<double>(bits >> 11) * 0x1.0p-52 - 1.0;
                norm += spread[i] * spread[i];
            }
            norm = std::sqrt(norm);
            for (double& x : spread) x /= norm;
            auto [v2, moved2] = iterate(std::move(spread));
            if (moved2) v = std::move(v2);
        }
        double lambda = 0.0;
        for (int i = 0; i < n; ++i) {
            double wi = 0.0;
            for (int j = 0; j < n; ++j) wi += m[i][j] * v[j];
            lambda += v[i] * wi;
        }
        lambda = std::max(lambda, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) m[i][j] -= lambda * v[i] * v[j];
        }
        out.values.push_back(lambda);
        out.vectors.push_back(std::move(v));
    }
    return out;
}

}  // namespace vibsim
