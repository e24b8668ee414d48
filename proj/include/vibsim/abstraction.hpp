#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibsim/common.hpp"
#include "vibsim/dataset.hpp"
#include "vibsim/envs.hpp"
#include "vibsim/mdp.hpp"
#include "vibsim/vib.hpp"

namespace vibsim {

// Deterministic state-to-component assignment: argmax of the component
// posterior at the encoder mean. No sampling at inference time, so the map is
// a function of the features.
inline int assign_abstract_state(const VibModel& model, const MixtureParams& mix,
                                 const std::vector<double>& features) {
    GaussianPosterior post = model.encode(features);
    std::vector<double> weights = posterior_over_components(post.mean, mix);
    return argmax(std::span<const double>(weights.data(), weights.size()));
}

inline int assign_abstract_state(const VibModel& model, const std::vector<double>& features) {
    return assign_abstract_state(model, model.mixture(), features);
}

struct AbstractionMap {
    std::vector<int> assign;  // ground state id -> component id
    int K = 0;
};

inline AbstractionMap build_abstraction_map(const VibModel& model, const EnvInstance& env) {
    AbstractionMap map;
    map.K = model.config.K;
    map.assign.resize(env.n_states);
    MixtureParams mix = model.mixture();
    for (int s = 0; s < env.n_states; ++s) {
        map.assign[s] = assign_abstract_state(model, mix, env.features[s]);
    }
    return map;
}

// Component of s_t for every dataset transition, in dataset order.
inline std::vector<int> assign_dataset_states(const VibModel& model, const TransitionDataset& ds) {
    MixtureParams mix = model.mixture();
    std::vector<int> out;
    out.reserve(ds.transitions.size());
    for (const LabeledTransition& tr : ds.transitions) {
        out.push_back(assign_abstract_state(model, mix, tr.s_t.features));
    }
    return out;
}

// Member-count-weighted average over abstract states of the fraction of
// members sharing the modal ground-truth label.
inline double purity(const std::vector<int>& assignments, const std::vector<int>& labels) {
    if (assignments.empty() || assignments.size() != labels.size()) {
        throw UsageError("purity: assignments and labels must be nonempty and aligned");
    }
    std::map<int, std::map<int, int>> label_counts;  // component -> label -> count
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        ++label_counts[assignments[i]][labels[i]];
    }
    double weighted = 0.0;
    for (const auto& [component, counts] : label_counts) {
        int modal = 0;
        for (const auto& [label, count] : counts) modal = std::max(modal, count);
        weighted += modal;
    }
    return weighted / static_cast<double>(assignments.size());
}

inline int effective_num_states(const std::vector<int>& assignments) {
    if (assignments.empty()) throw UsageError("effective_num_states: empty input");
    std::set<int> used(assignments.begin(), assignments.end());
    return static_cast<int>(used.size());
}

enum class RewardProjection { kAny, kMean };

// Decides goal membership of a transition's destination from its features.
using GoalPredicate = std::function<bool(const std::vector<double>&)>;

// reward[k][a] from dataset transitions whose source maps to component k:
// 1 if any such transition under action a reaches the goal (default), or the
// empirical goal frequency in mean mode.
inline std::vector<std::vector<double>> project_rewards(const VibModel& model,
                                                        const TransitionDataset& ds,
                                                        const GoalPredicate& goal,
                                                        RewardProjection mode = RewardProjection::kAny) {
    if (ds.transitions.empty()) throw UsageError("project_rewards: empty dataset");
    int K = model.config.K;
    int A = ds.n_actions;
    std::vector<int> from = assign_dataset_states(model, ds);
    std::vector<std::vector<double>> hits(K, std::vector<double>(A, 0.0));
    std::vector<std::vector<double>> support(K, std::vector<double>(A, 0.0));
    bool any_goal = false;
    for (std::size_t i = 0; i < ds.transitions.size(); ++i) {
        const LabeledTransition& tr = ds.transitions[i];
        support[from[i]][tr.a] += 1.0;
        if (goal(tr.s_next.features)) {
            hits[from[i]][tr.a] += 1.0;
            any_goal = true;
        }
    }
    if (!any_goal) {
        throw GoalNotRepresentedError("project_rewards: no dataset transition reaches the goal");
    }
    std::vector<std::vector<double>> reward(K, std::vector<double>(A, 0.0));
    for (int k = 0; k < K; ++k) {
        for (int a = 0; a < A; ++a) {
            if (mode == RewardProjection::kAny) {
                reward[k][a] = hits[k][a] > 0.0 ? 1.0 : 0.0;
            } else {
                reward[k][a] = support[k][a] > 0.0 ? hits[k][a] / support[k][a] : 0.0;
            }
        }
    }
    return reward;
}

struct AbstractMDP {
    int K = 0;
    int n_actions = 0;
    std::vector<std::vector<std::vector<double>>> transition;  // [action][k][l]
    std::vector<std::vector<double>> reward;                   // [k][action]
    double gamma = 0.9;

    void validate() const {
        if (K < 1 || n_actions < 1) throw ConfigError("AbstractMDP: empty state or action space");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("AbstractMDP: gamma must be in [0, 1)");
        if (static_cast<int>(transition.size()) != n_actions ||
            static_cast<int>(reward.size()) != K) {
            throw ConfigError("AbstractMDP: table shapes do not match K/n_actions");
        }
        for (const auto& per_action : transition) {
            if (static_cast<int>(per_action.size()) != K) {
                throw ConfigError("AbstractMDP: transition table must be K x K per action");
            }
            for (const auto& row : per_action) {
                if (static_cast<int>(row.size()) != K) {
                    throw ConfigError("AbstractMDP: transition table must be K x K per action");
                }
                double sum = 0.0;
                for (double p : row) {
                    if (!(p >= 0.0)) throw ConfigError("AbstractMDP: negative transition probability");
                    sum += p;
                }
                if (std::abs(sum - 1.0) > 1e-9) {
                    throw ConfigError("AbstractMDP: transition row does not sum to 1");
                }
            }
        }
        for (const auto& row : reward) {
            if (static_cast<int>(row.size()) != n_actions) {
                throw ConfigError("AbstractMDP: reward table must be K x n_actions");
            }
            if (!all_finite(std::span<const double>(row.data(), row.size()))) {
                throw ConfigError("AbstractMDP: non-finite reward");
            }
        }
    }
};

// Component-to-component transition counts per action with add-one smoothing;
// used when the prior has no learned transition table.
inline std::vector<std::vector<std::vector<double>>> empirical_abstract_transitions(
    const VibModel& model, const TransitionDataset& ds) {
    if (ds.transitions.empty()) throw UsageError("empirical_abstract_transitions: empty dataset");
    int K = model.config.K;
    int A = ds.n_actions;
    MixtureParams mix = model.mixture();
    std::vector<std::vector<std::vector<double>>> counts(
        A, std::vector<std::vector<double>>(K, std::vector<double>(K, 0.0)));
    for (const LabeledTransition& tr : ds.transitions) {
        int c_t = assign_abstract_state(model, mix, tr.s_t.features);
        int c_n = assign_abstract_state(model, mix, tr.s_next.features);
        counts[tr.a][c_t][c_n] += 1.0;
    }
    for (int a = 0; a < A; ++a) {
        for (int k = 0; k < K; ++k) {
            double total = 0.0;
            for (int l = 0; l < K; ++l) total += counts[a][k][l] + 1.0;
            for (int l = 0; l < K; ++l) counts[a][k][l] = (counts[a][k][l] + 1.0) / total;
        }
    }
    return counts;
}

// Discrete abstract MDP: transitions from the learned HMM tables (or
// empirical counts for GMM priors), rewards projected from the dataset.
inline AbstractMDP build_abstract_mdp(const VibModel& model, const TransitionDataset& ds,
                                      const GoalPredicate& goal, double gamma,
                                      RewardProjection mode = RewardProjection::kAny) {
    AbstractMDP mdp;
    mdp.K = model.config.K;
    mdp.n_actions = ds.n_actions;
    mdp.gamma = gamma;
    if (model.has_hmm()) {
        HmmPrior prior = model.hmm_prior();
        mdp.transition.assign(mdp.n_actions,
                              std::vector<std::vector<double>>(mdp.K, std::vector<double>(mdp.K, 0.0)));
        for (int a = 0; a < mdp.n_actions; ++a) {
            for (int k = 0; k < mdp.K; ++k) {
                double sum = 0.0;
                for (int l = 0; l < mdp.K; ++l) {
                    double p = std::exp(prior.log_transition.at(a * mdp.K + k, l));
                    mdp.transition[a][k][l] = p;
                    sum += p;
                }
                for (int l = 0; l < mdp.K; ++l) mdp.transition[a][k][l] /= sum;
            }
        }
    } else {
        mdp.transition = empirical_abstract_transitions(model, ds);
    }
    mdp.reward = project_rewards(model, ds, goal, mode);
    mdp.validate();
    return mdp;
}

struct QTable {
    std::vector<std::vector<double>> values;  // [k][action]
    bool converged = true;
};

// Bellman optimality iteration on the abstract MDP until the sup-norm update
// falls below tol.
inline QTable value_iteration(const AbstractMDP& mdp, double tol = 1e-8, int max_iters = 100000) {
    mdp.validate();
    if (!(tol > 0.0) || max_iters < 1) throw UsageError("value_iteration: bad tolerance or iteration cap");
    QTable q;
    q.values.assign(mdp.K, std::vector<double>(mdp.n_actions, 0.0));
    std::vector<double> v(mdp.K, 0.0);
    q.converged = false;
    for (int it = 0; it < max_iters; ++it) {
        double delta = 0.0;
        for (int k = 0; k < mdp.K; ++k) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                double next = 0.0;
                for (int l = 0; l < mdp.K; ++l) next += mdp.transition[a][k][l] * v[l];
                double updated = mdp.reward[k][a] + mdp.gamma * next;
                delta = std::max(delta, std::abs(updated - q.values[k][a]));
                q.values[k][a] = updated;
            }
        }
        for (int k = 0; k < mdp.K; ++k) {
            v[k] = *std::max_element(q.values[k].begin(), q.values[k].end());
        }
        if (delta < tol) {
            q.converged = true;
            break;
        }
    }
    return q;
}

// Sup-norm distance between Q and one Bellman backup of Q.
inline double bellman_residual(const AbstractMDP& mdp, const QTable& q) {
    std::vector<double> v(mdp.K);
    for (int k = 0; k < mdp.K; ++k) {
        v[k] = *std::max_element(q.values[k].begin(), q.values[k].end());
    }
    double res = 0.0;
    for (int k = 0; k < mdp.K; ++k) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            double next = 0.0;
            for (int l = 0; l < mdp.K; ++l) next += mdp.transition[a][k][l] * v[l];
            res = std::max(res, std::abs(mdp.reward[k][a] + mdp.gamma * next - q.values[k][a]));
        }
    }
    return res;
}

// Per-state softmax of Q / temperature.
inline std::vector<std::vector<double>> softmax_policy(const QTable& q, double temperature = 0.1) {
    if (!(temperature > 0.0)) throw UsageError("softmax_policy: temperature must be positive");
    std::vector<std::vector<double>> policy = q.values;
    for (auto& row : policy) {
        for (double& x : row) x /= temperature;
        softmax_inplace(std::span<double>(row.data(), row.size()));
    }
    return policy;
}

// Averages the dataset's Q-vector labels within each component. Components
// with no member transitions keep a -infinity sentinel so a greedy readout
// never prefers them.
inline QTable mean_q(const VibModel& model, const TransitionDataset& ds, int task_index = 0) {
    if (ds.transitions.empty()) throw UsageError("mean_q: empty dataset");
    if (task_index < 0 || task_index >= ds.n_tasks) throw UsageError("mean_q: task index out of range");
    int K = model.config.K;
    int A = ds.n_actions;
    std::vector<int> from = assign_dataset_states(model, ds);
    QTable q;
    q.values.assign(K, std::vector<double>(A, 0.0));
    std::vector<int> members(K, 0);
    for (std::size_t i = 0; i < ds.transitions.size(); ++i) {
        int k = from[i];
        ++members[k];
        const std::vector<double>& y = ds.transitions[i].y;
        for (int a = 0; a < A; ++a) q.values[k][a] += y[static_cast<std::size_t>(task_index) * A + a];
    }
    for (int k = 0; k < K; ++k) {
        if (members[k] == 0) {
            q.values[k].assign(A, -std::numeric_limits<double>::infinity());
        } else {
            for (int a = 0; a < A; ++a) q.values[k][a] /= members[k];
        }
    }
    return q;
}

struct PolicyEvalResult {
    double success_rate = 0.0;
    MeanStd episode_return;  // undiscounted
    int n_episodes = 0;
};

// Rolls out a ground-state policy for a fixed step budget per episode.
// Episode streams are derived from one base draw, so two evaluations seeded
// identically see the same start states (paired comparison).
inline PolicyEvalResult evaluate_ground_policy(const EnvInstance& env, const std::string& task,
                                               const std::function<int(int, Rng&)>& act,
                                               int budget, int n_episodes, Rng& rng) {
    if (n_episodes < 1) throw UsageError("evaluate_ground_policy: need n_episodes >= 1");
    if (budget < 0) throw UsageError("evaluate_ground_policy: budget must be nonnegative");
    std::uint64_t base = rng();
    int successes = 0;
    std::vector<double> returns(n_episodes, 0.0);
    for (int ep = 0; ep < n_episodes; ++ep) {
        Rng er(derive_seed(base, static_cast<std::uint64_t>(ep)));
        int s = sample_categorical(env.initial_distribution, er);
        bool reached = env.is_goal(s, task);
        double ep_return = 0.0;
        for (int t = 0; t < budget; ++t) {
            int a = act(s, er);
            StepResult sr = env.step(s, a, task);
            ep_return += sr.reward;
            s = sr.next_state;
            if (env.is_goal(s, task)) reached = true;
        }
        if (reached) ++successes;
        returns[ep] = ep_return;
    }
    PolicyEvalResult result;
    result.n_episodes = n_episodes;
    result.success_rate = static_cast<double>(successes) / n_episodes;
    result.episode_return = mean_std(std::span<const double>(returns.data(), returns.size()));
    return result;
}

// Abstract policy rollout: encode the ground observation, assign a component,
// sample the component's action distribution.
inline PolicyEvalResult evaluate_policy(const EnvInstance& env, const VibModel& model,
                                        const std::vector<std::vector<double>>& policy,
                                        const std::string& task, int budget, int n_episodes,
                                        Rng& rng) {
    if (static_cast<int>(policy.size()) != model.config.K) {
        throw UsageError("evaluate_policy: policy rows must match the component count");
    }
    MixtureParams mix = model.mixture();
    auto act = [&](int s, Rng& er) {
        int c = assign_abstract_state(model, mix, env.features[s]);
        return sample_categorical(policy[c], er);
    };
    return evaluate_ground_policy(env, task, act, budget, n_episodes, rng);
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json abstract_mdp_to_json(const AbstractMDP& mdp) {
    return nlohmann::json{{"K", mdp.K},
                          {"n_actions", mdp.n_actions},
                          {"transition", mdp.transition},
                          {"reward", mdp.reward},
                          {"gamma", mdp.gamma}};
}

inline AbstractMDP abstract_mdp_from_json(const nlohmann::json& j) {
    AbstractMDP mdp;
    mdp.K = j.at("K").get<int>();
    mdp.n_actions = j.at("n_actions").get<int>();
    mdp.transition = j.at("transition").get<std::vector<std::vector<std::vector<double>>>>();
    mdp.reward = j.at("reward").get<std::vector<std::vector<double>>>();
    mdp.gamma = j.at("gamma").get<double>();
    mdp.validate();
    return mdp;
}

inline void save_abstract_mdp(const std::string& path, const AbstractMDP& mdp) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << abstract_mdp_to_json(mdp).dump(2) << "\n";
}

inline AbstractMDP load_abstract_mdp(const std::string& path) {
    return abstract_mdp_from_json(nn::load_json_file(path));
}

}  // namespace vibsim
