#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "vibsim/common.hpp"

namespace vibsim {

// Finite MDP with explicit tables. transition[s][a] is a distribution over
// next states; reward[s][a] is the expected immediate reward.
struct TabularMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<std::vector<std::vector<double>>> transition;  // [s][a][s']
    std::vector<std::vector<double>> reward;                   // [s][a]
    double gamma = 0.9;
    std::vector<double> initial_distribution;
    std::set<int> terminal;

    void validate() const {
        if (n_states < 1 || n_actions < 1) throw ConfigError("TabularMDP: empty state or action set");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("TabularMDP: gamma must be in [0, 1)");
        auto check_row = [](const std::vector<double>& row, const std::string& what) {
            double sum = 0.0;
            for (double p : row) {
                if (p < 0.0 || !std::isfinite(p)) throw ConfigError("TabularMDP: invalid probability in " + what);
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("TabularMDP: " + what + " does not sum to 1");
        };
        for (int s = 0; s < n_states; ++s) {
            for (int a = 0; a < n_actions; ++a) {
                check_row(transition[s][a], "transition row (" + std::to_string(s) + "," + std::to_string(a) + ")");
                if (!std::isfinite(reward[s][a])) throw ConfigError("TabularMDP: non-finite reward");
            }
        }
        check_row(initial_distribution, "initial distribution");
    }
};

struct Observation {
    int state_id = -1;
    std::vector<double> features;
};

struct StepResult {
    int next_state = -1;
    double reward = 0.0;
    bool done = false;
};

inline int sample_categorical(const std::vector<double>& probs, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng);
    double acc = 0.0;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
        acc += probs[i];
        if (r <= acc) return i;
    }
    return static_cast<int>(probs.size()) - 1;  // guard against rounding
}

// Samples one transition. Reward depends on the current state-action pair.
inline StepResult step(const TabularMDP& mdp, int state, int action, Rng& rng) {
    if (state < 0 || state >= mdp.n_states) throw UsageError("step: state id out of range");
    if (action < 0 || action >= mdp.n_actions) throw UsageError("step: action id out of range");
    StepResult out;
    out.next_state = sample_categorical(mdp.transition[state][action], rng);
    out.reward = mdp.reward[state][action];
    out.done = mdp.terminal.count(out.next_state) > 0;
    return out;
}

inline int sample_initial_state(const TabularMDP& mdp, Rng& rng) {
    return sample_categorical(mdp.initial_distribution, rng);
}

// Exact state-action values by Bellman optimality iteration on the tables.
// Used for ground-truth Q labels in idealized checks.
inline std::vector<std::vector<double>> tabular_q_optimal(const TabularMDP& mdp, double tol = 1e-12,
                                                          int max_iters = 100000) {
    std::vector<std::vector<double>> q(mdp.n_states, std::vector<double>(mdp.n_actions, 0.0));
    for (int it = 0; it < max_iters; ++it) {
        double delta = 0.0;
        std::vector<double> vmax(mdp.n_states, 0.0);
        for (int s = 0; s < mdp.n_states; ++s) {
            double m = q[s][0];
            for (int a = 1; a < mdp.n_actions; ++a) m = std::max(m, q[s][a]);
            vmax[s] = mdp.terminal.count(s) ? 0.0 : m;
        }
        for (int s = 0; s < mdp.n_states; ++s) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                double nv = 0.0;
                for (int sp = 0; sp < mdp.n_states; ++sp) {
                    double p = mdp.transition[s][a][sp];
                    if (p > 0.0) nv += p * vmax[sp];
                }
                double updated = mdp.reward[s][a] + mdp.gamma * nv;
                delta = std::max(delta, std::abs(updated - q[s][a]));
                q[s][a] = updated;
            }
        }
        if (delta < tol) break;
    }
    return q;
}

}  // namespace vibsim
