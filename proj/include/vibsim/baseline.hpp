#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibsim/abstraction.hpp"
#include "vibsim/adam.hpp"
#include "vibsim/common.hpp"
#include "vibsim/dataset.hpp"
#include "vibsim/graph.hpp"
#include "vibsim/mdp.hpp"
#include "vibsim/net.hpp"

namespace vibsim {

// One-step environment model over tabular state ids: either a trained network
// on (state one-hot, action one-hot) inputs or an exact wrapper around a
// TabularMDP.
struct ForwardModel {
    int n_states = 0;
    int n_actions = 0;
    bool oracle = false;

    // learned variant: shared tanh trunk with a reward head and a next-state
    // logit head
    std::vector<nn::Parameter> trunk_w, trunk_b;
    nn::Parameter reward_w, reward_b;   // -> 1
    nn::Parameter logits_w, logits_b;   // -> n_states

    // oracle variant
    std::vector<std::vector<double>> true_reward;               // [s][a]
    std::vector<std::vector<std::vector<double>>> true_trans;   // [s][a][s']

    std::vector<double> one_hot_input(int s, int a) const {
        std::vector<double> x(n_states + n_actions, 0.0);
        x[s] = 1.0;
        x[n_states + a] = 1.0;
        return x;
    }

    void check_range(int s, int a) const {
        if (s < 0 || s >= n_states || a < 0 || a >= n_actions) {
            throw UsageError("ForwardModel: state or action out of range");
        }
    }

    // Trunk activations for one (s, a) pair.
    std::vector<double> trunk(int s, int a) const {
        std::vector<double> h = one_hot_input(s, a);
        for (std::size_t li = 0; li < trunk_w.size(); ++li) {
            const nn::Tensor& w = trunk_w[li].value;
            std::vector<double> next(w.cols, 0.0);
            for (int j = 0; j < w.cols; ++j) next[j] = trunk_b[li].value.data[j];
            for (std::size_t k = 0; k < h.size(); ++k) {
                if (h[k] == 0.0) continue;
                for (int j = 0; j < w.cols; ++j) next[j] += h[k] * w.at(static_cast<int>(k), j);
            }
            for (double& v : next) v = std::tanh(v);
            h = std::move(next);
        }
        return h;
    }

    double reward_hat(int s, int a) const {
        check_range(s, a);
        if (oracle) return true_reward[s][a];
        std::vector<double> h = trunk(s, a);
        double r = reward_b.value.data[0];
        for (std::size_t k = 0; k < h.size(); ++k) r += h[k] * reward_w.value.at(static_cast<int>(k), 0);
        return r;
    }

    std::vector<double> transition_hat(int s, int a) const {
        check_range(s, a);
        if (oracle) return true_trans[s][a];
        std::vector<double> h = trunk(s, a);
        std::vector<double> logits(n_states, 0.0);
        for (int j = 0; j < n_states; ++j) logits[j] = logits_b.value.data[j];
        for (std::size_t k = 0; k < h.size(); ++k) {
            double hv = h[k];
            for (int j = 0; j < n_states; ++j) logits[j] += hv * logits_w.value.at(static_cast<int>(k), j);
        }
        softmax_inplace(std::span<double>(logits.data(), logits.size()));
        return logits;
    }

    std::vector<nn::Parameter*> params() {
        std::vector<nn::Parameter*> ps;
        for (std::size_t li = 0; li < trunk_w.size(); ++li) {
            ps.push_back(&trunk_w[li]);
            ps.push_back(&trunk_b[li]);
        }
        ps.push_back(&reward_w);
        ps.push_back(&reward_b);
        ps.push_back(&logits_w);
        ps.push_back(&logits_b);
        return ps;
    }
};

inline ForwardModel oracle_forward_model(const TabularMDP& mdp) {
    mdp.validate();
    ForwardModel m;
    m.n_states = mdp.n_states;
    m.n_actions = mdp.n_actions;
    m.oracle = true;
    m.true_reward = mdp.reward;
    m.true_trans = mdp.transition;
    return m;
}

struct ForwardModelConfig {
    std::vector<int> hidden = {128};
    int steps = 3000;
    int batch_size = 64;
    double lr = 1e-3;
};

// Squared error on rewards plus cross-entropy on the next-state id.
inline ForwardModel train_forward_model(const TransitionDataset& ds, int n_states,
                                        const ForwardModelConfig& cfg, Rng& rng) {
    if (ds.transitions.empty()) throw UsageError("train_forward_model: empty dataset");
    if (cfg.steps < 1 || cfg.batch_size < 1) throw ConfigError("train_forward_model: bad schedule");
    for (const LabeledTransition& tr : ds.transitions) {
        if (tr.s_t.state_id < 0 || tr.s_t.state_id >= n_states ||
            tr.s_next.state_id < 0 || tr.s_next.state_id >= n_states) {
            throw UsageError("train_forward_model: state id outside [0, n_states)");
        }
    }

    ForwardModel model;
    model.n_states = n_states;
    model.n_actions = ds.n_actions;
    int in_dim = n_states + ds.n_actions;
    int trunk_out = in_dim;
    for (std::size_t li = 0; li < cfg.hidden.size(); ++li) {
        std::string tag = "forward.l" + std::to_string(li);
        model.trunk_w.emplace_back(tag + ".w", nn::glorot_uniform(trunk_out, cfg.hidden[li], rng));
        model.trunk_b.emplace_back(tag + ".b", nn::Tensor(1, cfg.hidden[li]));
        trunk_out = cfg.hidden[li];
    }
    model.reward_w = nn::Parameter("forward.reward.w", nn::glorot_uniform(trunk_out, 1, rng));
    model.reward_b = nn::Parameter("forward.reward.b", nn::Tensor(1, 1));
    model.logits_w = nn::Parameter("forward.logits.w", nn::glorot_uniform(trunk_out, n_states, rng));
    model.logits_b = nn::Parameter("forward.logits.b", nn::Tensor(1, n_states));

    nn::AdamOptimizer opt(model.params(), cfg.lr);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(ds.transitions.size()) - 1);
    for (int step = 0; step < cfg.steps; ++step) {
        int b = cfg.batch_size;
        nn::Tensor x(b, in_dim);
        nn::Tensor r(b, 1);
        std::vector<int> next_ids(b);
        for (int i = 0; i < b; ++i) {
            const LabeledTransition& tr = ds.transitions[pick(rng)];
            x.at(i, tr.s_t.state_id) = 1.0;
            x.at(i, n_states + tr.a) = 1.0;
            r.data[i] = tr.r;
            next_ids[i] = tr.s_next.state_id;
        }
        nn::Graph g;
        auto h = g.input(std::move(x));
        for (std::size_t li = 0; li < model.trunk_w.size(); ++li) {
            h = g.tanh_(g.affine(h, g.param(model.trunk_w[li]), g.param(model.trunk_b[li])));
        }
        auto r_hat = g.affine(h, g.param(model.reward_w), g.param(model.reward_b));
        auto logits = g.affine(h, g.param(model.logits_w), g.param(model.logits_b));
        auto sq = g.square(g.sub(r_hat, g.input(std::move(r))));
        auto ce = g.sub(g.log_sum_exp_rows(logits), g.gather_cols(logits, next_ids));
        auto loss = g.scale(g.sum_all(g.add(sq, ce)), 1.0 / b);
        g.forward();
        double loss_val = g.scalar_value(loss);
        if (!std::isfinite(loss_val)) {
            throw TrainingError("train_forward_model: non-finite loss at step " + std::to_string(step));
        }
        opt.zero_grad();
        g.backward(loss);
        opt.step();
    }
    return model;
}

// Fraction of transitions whose most likely predicted next state is correct.
inline double next_state_accuracy(const ForwardModel& model,
                                  std::span<const LabeledTransition> transitions) {
    if (transitions.empty()) throw UsageError("next_state_accuracy: empty input");
    int hits = 0;
    for (const LabeledTransition& tr : transitions) {
        std::vector<double> probs = model.transition_hat(tr.s_t.state_id, tr.a);
        if (argmax(std::span<const double>(probs.data(), probs.size())) == tr.s_next.state_id) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(transitions.size());
}

struct Partition {
    std::vector<std::vector<int>> blocks;

    int size() const { return static_cast<int>(blocks.size()); }

    std::vector<int> to_assignment(int n_states) const {
        std::vector<int> assign(n_states, -1);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            for (int s : blocks[b]) {
                if (s < 0 || s >= n_states || assign[s] != -1) {
                    throw UsageError("Partition: blocks must disjointly cover [0, n_states)");
                }
                assign[s] = static_cast<int>(b);
            }
        }
        for (int s = 0; s < n_states; ++s) {
            if (assign[s] == -1) throw UsageError("Partition: state " + std::to_string(s) + " uncovered");
        }
        return assign;
    }
};

// Greedy approximate-bisimulation partitioning on a forward model:
// (1) group states whose predicted reward vectors agree within epsilon,
// first-fit in state-id order against every current member; (2) repeatedly
// split blocks whose members disagree by more than epsilon on some
// block-aggregated transition probability, with the same first-fit rule;
// (3) stop after a pass with no splits.
inline Partition greedy_approx_bisimulation(const ForwardModel& model, int n_states, int n_actions,
                                            double epsilon) {
    if (model.n_states != n_states || model.n_actions != n_actions) {
        throw UsageError("greedy_approx_bisimulation: model dimensions disagree with arguments");
    }
    if (epsilon < 0.0) throw UsageError("greedy_approx_bisimulation: epsilon must be nonnegative");

    std::vector<std::vector<double>> rhat(n_states, std::vector<double>(n_actions, 0.0));
    std::vector<std::vector<std::vector<double>>> that(n_states);
    for (int s = 0; s < n_states; ++s) {
        that[s].resize(n_actions);
        for (int a = 0; a < n_actions; ++a) {
            rhat[s][a] = model.reward_hat(s, a);
            that[s][a] = model.transition_hat(s, a);
        }
    }

    Partition part;
    for (int s = 0; s < n_states; ++s) {
        bool placed = false;
        for (auto& block : part.blocks) {
            bool ok = true;
            for (int m : block) {
                for (int a = 0; a < n_actions && ok; ++a) {
                    if (std::abs(rhat[s][a] - rhat[m][a]) > epsilon) ok = false;
                }
                if (!ok) break;
            }
            if (ok) {
                block.push_back(s);
                placed = true;
                break;
            }
        }
        if (!placed) part.blocks.push_back({s});
    }

    // Aggregated probability of landing in each current block, per action.
    auto aggregate = [&](int s) {
        std::vector<std::vector<double>> agg(n_actions,
                                             std::vector<double>(part.blocks.size(), 0.0));
        for (int a = 0; a < n_actions; ++a) {
            for (std::size_t c = 0; c < part.blocks.size(); ++c) {
                double mass = 0.0;
                for (int t : part.blocks[c]) mass += that[s][a][t];
                agg[a][c] = mass;
            }
        }
        return agg;
    };

    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<std::vector<int>> next_blocks;
        for (std::size_t bi = 0; bi < part.blocks.size(); ++bi) {
            const std::vector<int>& block = part.blocks[bi];
            if (block.size() == 1) {
                next_blocks.push_back(block);
                continue;
            }
            std::map<int, std::vector<std::vector<double>>> agg;
            for (int s : block) agg.emplace(s, aggregate(s));
            std::vector<std::vector<int>> groups;
            for (int s : block) {
                bool placed = false;
                for (auto& group : groups) {
                    bool ok = true;
                    for (int m : group) {
                        for (int a = 0; a < n_actions && ok; ++a) {
                            for (std::size_t c = 0; c < part.blocks.size(); ++c) {
                                if (std::abs(agg.at(s)[a][c] - agg.at(m)[a][c]) > epsilon) {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        if (!ok) break;
                    }
                    if (ok) {
                        group.push_back(s);
                        placed = true;
                        break;
                    }
                }
                if (!placed) groups.push_back({s});
            }
            if (groups.size() > 1) changed = true;
            for (auto& group : groups) next_blocks.push_back(std::move(group));
        }
        part.blocks = std::move(next_blocks);
    }
    return part;
}

struct PartitionMetrics {
    int size = 0;
    double purity = 0.0;
};

inline PartitionMetrics partition_metrics(const Partition& part, const std::vector<int>& labels) {
    int n_states = static_cast<int>(labels.size());
    std::vector<int> assign = part.to_assignment(n_states);
    return PartitionMetrics{part.size(), purity(assign, labels)};
}

inline nlohmann::json partition_to_json(const Partition& part) {
    return nlohmann::json{{"blocks", part.blocks}};
}

inline Partition partition_from_json(const nlohmann::json& j) {
    Partition part;
    part.blocks = j.at("blocks").get<std::vector<std::vector<int>>>();
    return part;
}

inline void save_partition(const std::string& path, const Partition& part) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << partition_to_json(part).dump(2) << "\n";
}

inline Partition load_partition(const std::string& path) {
    return partition_from_json(nn::load_json_file(path));
}

}  // namespace vibsim
