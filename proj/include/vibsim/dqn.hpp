#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibsim/adam.hpp"
#include "vibsim/common.hpp"
#include "vibsim/dataset.hpp"
#include "vibsim/envs.hpp"
#include "vibsim/graph.hpp"
#include "vibsim/net.hpp"
#include "vibsim/params_io.hpp"

namespace vibsim {

struct DqnTrainConfig {
    int episodes = 300;
    int max_steps = 50;          // episode cap; environments have no terminals
    std::vector<int> hidden = {64, 64};
    int replay_capacity = 10000;
    int batch_size = 32;
    int target_update = 100;     // in gradient steps
    double lr = 1e-3;
    double eps_start = 1.0;
    double eps_end = 0.1;        // annealed over the first half of training

    void validate() const {
        if (episodes < 1 || max_steps < 1) throw ConfigError("DqnTrainConfig: episodes and max_steps must be positive");
        if (replay_capacity < 1 || batch_size < 1 || target_update < 1) {
            throw ConfigError("DqnTrainConfig: replay/batch/target sizes must be positive");
        }
        if (!(lr > 0.0)) throw ConfigError("DqnTrainConfig: lr must be positive");
        if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0)) {
            throw ConfigError("DqnTrainConfig: epsilons must be in [0, 1]");
        }
        for (int h : hidden) {
            if (h < 1) throw ConfigError("DqnTrainConfig: hidden sizes must be positive");
        }
    }
};

// Online/target pair of fully-connected Q-networks.
struct QNetwork {
    nn::DenseNet online;
    nn::DenseNet target;
    int n_actions = 0;

    std::vector<double> q_values(const std::vector<double>& features) const {
        return online.apply_row(features);
    }

    void sync_target() {
        for (std::size_t i = 0; i < online.weights.size(); ++i) {
            target.weights[i].value = online.weights[i].value;
            target.biases[i].value = online.biases[i].value;
        }
    }
};

inline QNetwork make_qnetwork(int feature_dim, const std::vector<int>& hidden, int n_actions, Rng& rng) {
    QNetwork q;
    q.online = nn::DenseNet::make(feature_dim, hidden, n_actions, rng, "qnet");
    q.target = q.online;
    for (auto& p : q.target.weights) p.id = "target." + p.id;
    for (auto& p : q.target.biases) p.id = "target." + p.id;
    q.n_actions = n_actions;
    return q;
}

// Uniform random action with probability epsilon, otherwise the argmax with
// lowest-index tie-break.
inline int epsilon_greedy(const std::vector<double>& q_values, double epsilon, Rng& rng) {
    if (q_values.empty()) throw UsageError("epsilon_greedy: empty Q-vector");
    if (epsilon < 0.0 || epsilon > 1.0) throw UsageError("epsilon_greedy: epsilon must be in [0, 1]");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < epsilon) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(q_values.size()) - 1);
        return pick(rng);
    }
    return argmax(std::span<const double>(q_values.data(), q_values.size()));
}

// Fixed-capacity ring buffer with uniform sampling.
class ReplayBuffer {
public:
    struct Item {
        int s, a;
        double r;
        int s_next;
        bool done;
    };

    explicit ReplayBuffer(int capacity) : capacity_(capacity) {
        if (capacity < 1) throw UsageError("ReplayBuffer: capacity must be positive");
    }

    void push(Item item) {
        if (static_cast<int>(items_.size()) < capacity_) {
            items_.push_back(item);
        } else {
            items_[head_] = item;
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return items_.size(); }
    int capacity() const { return capacity_; }
    const Item& operator[](std::size_t i) const { return items_[i]; }

    std::vector<Item> sample(int batch, Rng& rng) const {
        std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
        std::vector<Item> out;
        out.reserve(batch);
        for (int i = 0; i < batch; ++i) out.push_back(items_[pick(rng)]);
        return out;
    }

private:
    int capacity_;
    std::size_t head_ = 0;
    std::vector<Item> items_;
};

struct DqnResult {
    QNetwork net;
    std::vector<double> td_losses;  // one entry per gradient step
};

inline nlohmann::json qnetwork_to_json(const QNetwork& q) {
    int feature_dim = q.online.weights.front().value.rows;
    std::vector<int> hidden;
    for (std::size_t i = 0; i + 1 < q.online.weights.size(); ++i) {
        hidden.push_back(q.online.weights[i].value.cols);
    }
    std::vector<const nn::Parameter*> params;
    for (const auto& p : q.online.weights) params.push_back(&p);
    for (const auto& p : q.online.biases) params.push_back(&p);
    return nlohmann::json{{"feature_dim", feature_dim},
                          {"hidden", hidden},
                          {"n_actions", q.n_actions},
                          {"net", nn::params_to_json(params)}};
}

inline QNetwork qnetwork_from_json(const nlohmann::json& j) {
    Rng scratch(0);
    QNetwork q = make_qnetwork(j.at("feature_dim").get<int>(),
                               j.at("hidden").get<std::vector<int>>(),
                               j.at("n_actions").get<int>(), scratch);
    std::vector<nn::Parameter*> params;
    for (auto& p : q.online.weights) params.push_back(&p);
    for (auto& p : q.online.biases) params.push_back(&p);
    nn::params_from_json(j.at("net"), params);
    q.sync_target();
    return q;
}

inline void save_qnetwork(const std::string& path, const QNetwork& q) {
    std::ofstream out(path);
    if (!out) throw ConfigError("save_qnetwork: cannot open " + path);
    out << qnetwork_to_json(q).dump(2) << "\n";
}

inline QNetwork load_qnetwork(const std::string& path) {
    return qnetwork_from_json(nn::load_json_file(path));
}

// Experience replay + epsilon-greedy exploration + target bootstrapping on a
// squared temporal-difference loss.
inline DqnResult train_dqn(const EnvInstance& env, const std::string& task,
                           const DqnTrainConfig& cfg, Rng& rng) {
    DqnResult result;
    result.net = make_qnetwork(env.feature_dim, cfg.hidden, env.n_actions, rng);
    QNetwork& qnet = result.net;

    nn::AdamOptimizer opt(qnet.online.params(), cfg.lr);
    ReplayBuffer buffer(cfg.replay_capacity);

    long total_steps = static_cast<long>(cfg.episodes) * cfg.max_steps;
    long anneal_steps = std::max<long>(1, total_steps / 2);
    long env_step = 0;
    int grad_steps = 0;

    for (int ep = 0; ep < cfg.episodes; ++ep) {
        int s = sample_categorical(env.initial_distribution, rng);
        for (int t = 0; t < cfg.max_steps; ++t) {
            double frac = std::min(1.0, static_cast<double>(env_step) / anneal_steps);
            double eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
            int a = epsilon_greedy(qnet.q_values(env.features[s]), eps, rng);
            StepResult sr = env.step(s, a, task);
            buffer.push({s, a, sr.reward, sr.next_state, sr.done});
            s = sr.next_state;
            ++env_step;

            if (static_cast<int>(buffer.size()) >= cfg.batch_size) {
                auto batch = buffer.sample(cfg.batch_size, rng);
                int b = cfg.batch_size;
                nn::Tensor x(b, env.feature_dim);
                nn::Tensor x_next(b, env.feature_dim);
                std::vector<int> actions(b);
                for (int i = 0; i < b; ++i) {
                    const auto& it = batch[i];
                    std::copy(env.features[it.s].begin(), env.features[it.s].end(),
                              x.data.begin() + static_cast<std::size_t>(i) * env.feature_dim);
                    std::copy(env.features[it.s_next].begin(), env.features[it.s_next].end(),
                              x_next.data.begin() + static_cast<std::size_t>(i) * env.feature_dim);
                    actions[i] = it.a;
                }
                nn::Tensor qt = qnet.target.apply(x_next);
                nn::Tensor targets(b, 1);
                for (int i = 0; i < b; ++i) {
                    double best = qt.at(i, 0);
                    for (int j = 1; j < qt.cols; ++j) best = std::max(best, qt.at(i, j));
                    const auto& it = batch[i];
                    targets.data[i] = it.r + (it.done ? 0.0 : env.gamma * best);
                }

                nn::Graph g;
                auto xv = g.input(std::move(x));
                auto qv = qnet.online.forward(g, xv);
                auto qa = g.gather_cols(qv, actions);
                auto diff = g.sub(qa, g.input(std::move(targets)));
                auto loss = g.scale(g.sum_all(g.square(diff)), 1.0 / b);
                g.forward();
                double loss_val = g.scalar_value(loss);
                if (!std::isfinite(loss_val)) {
                    throw TrainingError("train_dqn: non-finite TD loss at gradient step " +
                                        std::to_string(grad_steps));
                }
                opt.zero_grad();
                g.backward(loss);
                opt.step();
                result.td_losses.push_back(loss_val);
                ++grad_steps;
                if (grad_steps % cfg.target_update == 0) qnet.sync_target();
            }
        }
    }
    return result;
}

// Rolls out epsilon-greedy episodes and labels each visited state with the
// full Q-vector; multi-task collection concatenates one Q-vector per task and
// rotates the behavior network across episodes.
inline TransitionDataset collect_dataset(const EnvInstance& env, const std::vector<std::string>& tasks,
                                         const std::vector<QNetwork>& qnets, int n_transitions,
                                         double behavior_epsilon, int max_steps, Rng& rng,
                                         std::uint64_t seed_tag = 0) {
    if (n_transitions < 1) throw UsageError("collect_dataset: need n_transitions >= 1");
    if (tasks.size() != qnets.size() || tasks.empty()) {
        throw UsageError("collect_dataset: need one Q-network per task");
    }
    TransitionDataset ds;
    ds.env_id = env.id;
    ds.n_actions = env.n_actions;
    ds.n_tasks = static_cast<int>(tasks.size());
    ds.seed = seed_tag;

    auto label_of = [&](int s) {
        std::vector<double> y;
        y.reserve(static_cast<std::size_t>(env.n_actions) * qnets.size());
        for (const QNetwork& q : qnets) {
            std::vector<double> qv = q.q_values(env.features[s]);
            y.insert(y.end(), qv.begin(), qv.end());
        }
        return y;
    };

    int episode = 0;
    while (static_cast<int>(ds.transitions.size()) < n_transitions) {
        int behavior_task = episode % static_cast<int>(tasks.size());
        const QNetwork& behavior = qnets[behavior_task];
        const std::string& task = tasks[behavior_task];
        int s = sample_categorical(env.initial_distribution, rng);
        for (int t = 0; t < max_steps && static_cast<int>(ds.transitions.size()) < n_transitions; ++t) {
            int a = epsilon_greedy(behavior.q_values(env.features[s]), behavior_epsilon, rng);
            StepResult sr = env.step(s, a, task);
            LabeledTransition rec;
            rec.s_t = env.observe(s);
            rec.a = a;
            rec.r = sr.reward;
            rec.s_next = env.observe(sr.next_state);
            rec.y = label_of(s);
            rec.done = sr.done;
            ds.transitions.push_back(std::move(rec));
            s = sr.next_state;
        }
        ++episode;
    }
    ds.validate();
    return ds;
}

}  // namespace vibsim
