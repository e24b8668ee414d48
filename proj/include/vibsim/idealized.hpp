#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "vibsim/common.hpp"
#include "vibsim/dataset.hpp"

namespace vibsim {

// Table-based loss under the idealized assumptions: deterministic encoder
// given by an explicit state-to-component assignment, a per-component value
// table as the decoder, and exact discrete transition probabilities with a
// uniform component prior. Returns the per-sample average
//   err(y, q_table[c_t]) - beta * (log T^a[c_t][c_next] + log(1/K)),
// which for a bisimulation-respecting assignment on a deterministic MDP
// collapses to beta * log K. A transition assigned zero probability makes the
// value +infinity.
inline double idealized_loss(const std::vector<int>& assignment,
                             const std::vector<std::vector<double>>& q_table,
                             const std::vector<std::vector<std::vector<double>>>& transition_table,
                             const TransitionDataset& dataset, double beta) {
    if (dataset.transitions.empty()) throw UsageError("idealized_loss: empty dataset");
    int K = static_cast<int>(q_table.size());
    if (K < 1) throw UsageError("idealized_loss: empty q_table");
    for (const auto& per_action : transition_table) {
        if (static_cast<int>(per_action.size()) != K) {
            throw UsageError("idealized_loss: transition table must be K x K per action");
        }
        for (const auto& row : per_action) {
            if (static_cast<int>(row.size()) != K) {
                throw UsageError("idealized_loss: transition table must be K x K per action");
            }
        }
    }
    double log_rho = -std::log(static_cast<double>(K));
    double total = 0.0;
    for (const LabeledTransition& tr : dataset.transitions) {
        int s = tr.s_t.state_id;
        int s_next = tr.s_next.state_id;
        if (s < 0 || s >= static_cast<int>(assignment.size()) || s_next < 0 ||
            s_next >= static_cast<int>(assignment.size())) {
            throw UsageError("idealized_loss: assignment does not cover every dataset state");
        }
        int c_t = assignment[s];
        int c_next = assignment[s_next];
        if (c_t < 0 || c_t >= K || c_next < 0 || c_next >= K) {
            throw UsageError("idealized_loss: component id out of range");
        }
        if (tr.a < 0 || tr.a >= static_cast<int>(transition_table.size())) {
            throw UsageError("idealized_loss: action id outside the transition table");
        }
        const std::vector<double>& q = q_table[c_t];
        if (q.size() != tr.y.size()) {
            throw UsageError("idealized_loss: q_table row width does not match labels");
        }
        double err = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) {
            double dj = tr.y[j] - q[j];
            err += dj * dj;
        }
        double t_prob = transition_table[tr.a][c_t][c_next];
        if (!(t_prob > 0.0)) return std::numeric_limits<double>::infinity();
        total += err - beta * (std::log(t_prob) + log_rho);
    }
    return total / static_cast<double>(dataset.transitions.size());
}

}  // namespace vibsim
