#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibsim/common.hpp"
#include "vibsim/mdp.hpp"

namespace vibsim {

// One Q-labeled transition: y holds the Q-vector of s_t under the trained
// network(s), concatenated across tasks for multi-task datasets.
struct LabeledTransition {
    Observation s_t;
    int a = 0;
    double r = 0.0;
    Observation s_next;
    std::vector<double> y;
    bool done = false;
};

struct TransitionDataset {
    std::vector<LabeledTransition> transitions;
    std::string env_id;
    int n_actions = 0;
    int n_tasks = 1;
    std::uint64_t seed = 0;

    std::size_t size() const { return transitions.size(); }
    int feature_dim() const {
        return transitions.empty() ? 0 : static_cast<int>(transitions.front().s_t.features.size());
    }

    void validate() const {
        if (transitions.empty()) throw UsageError("TransitionDataset: empty");
        std::size_t fd = transitions.front().s_t.features.size();
        for (const LabeledTransition& t : transitions) {
            if (t.s_t.features.size() != fd || t.s_next.features.size() != fd) {
                throw UsageError("TransitionDataset: inconsistent feature dimensions");
            }
            if (t.a < 0 || t.a >= n_actions) throw UsageError("TransitionDataset: action id out of range");
            if (!all_finite(t.y)) throw UsageError("TransitionDataset: non-finite Q label");
        }
    }
};

// JSON-lines: one record per line with fields s_t, a, r, s_next, y, done.
inline void save_dataset_jsonl(const TransitionDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    for (const LabeledTransition& t : ds.transitions) {
        nlohmann::json rec{{"s_t", t.s_t.features}, {"a", t.a},       {"r", t.r},
                           {"s_next", t.s_next.features}, {"y", t.y}, {"done", t.done}};
        out << rec.dump() << "\n";
    }
    nlohmann::json meta{{"env_id", ds.env_id},
                        {"n_actions", ds.n_actions},
                        {"n_tasks", ds.n_tasks},
                        {"seed", ds.seed}};
    std::ofstream mout(path + ".meta.json");
    mout << meta.dump(2) << "\n";
}

inline TransitionDataset load_dataset_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    TransitionDataset ds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line);
        LabeledTransition t;
        t.s_t.features = rec.at("s_t").get<std::vector<double>>();
        t.a = rec.at("a").get<int>();
        t.r = rec.at("r").get<double>();
        t.s_next.features = rec.at("s_next").get<std::vector<double>>();
        t.y = rec.at("y").get<std::vector<double>>();
        t.done = rec.at("done").get<bool>();
        ds.transitions.push_back(std::move(t));
    }
    std::ifstream min(path + ".meta.json");
    if (min) {
        nlohmann::json meta;
        min >> meta;
        ds.env_id = meta.value("env_id", "");
        ds.n_actions = meta.value("n_actions", 0);
        ds.n_tasks = meta.value("n_tasks", 1);
        ds.seed = meta.value("seed", 0ull);
    }
    if (ds.n_actions == 0 && !ds.transitions.empty()) {
        // Fall back to single-task shape inference.
        ds.n_tasks = 1;
        ds.n_actions = static_cast<int>(ds.transitions.front().y.size());
    }
    return ds;
}

}  // namespace vibsim
