#pragma once

#include <cmath>
#include <vector>

#include "vibsim/common.hpp"
#include "vibsim/tensor.hpp"

namespace vibsim::nn {

// Bias-corrected adaptive-moment optimizer. Moment buffers start at zero and
// follow the parameter registration order, so runs are reproducible.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Parameter*> params, double lr = 1e-3,
                           double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (Parameter* p : params_) {
            m_.emplace_back(p->value.rows, p->value.cols);
            v_.emplace_back(p->value.rows, p->value.cols);
        }
    }

    void zero_grad() {
        for (Parameter* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        double c1 = 1.0 - std::pow(beta1_, t_);
        double c2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Parameter& p = *params_[pi];
            if (!all_finite(p.grad.data)) {
                throw TrainingError("non-finite gradient in parameter '" + p.id + "'");
            }
            Tensor& m = m_[pi];
            Tensor& v = v_[pi];
            for (int i = 0; i < p.value.size(); ++i) {
                double g = p.grad.data[i];
                m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g;
                v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g * g;
                double mhat = m.data[i] / c1;
                double vhat = v.data[i] / c2;
                p.value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int steps_taken() const { return t_; }

private:
    std::vector<Parameter*> params_;
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace vibsim::nn
