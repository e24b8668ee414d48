#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vibsim/common.hpp"
#include "vibsim/mdp.hpp"

namespace vibsim {

// A ground environment with exact deterministic dynamics, per-state feature
// vectors, ground-truth bisimulation labels, and named goal tasks. Immutable
// after construction.
struct EnvInstance {
    std::string id;
    int n_states = 0;
    int n_actions = 0;
    int feature_dim = 0;
    std::vector<std::vector<double>> features;              // [state]
    std::vector<int> labels;                                // coarsest-bisimulation block per state
    int n_labels = 0;
    std::vector<std::vector<int>> next_state;               // [state][action]
    std::vector<std::string> task_names;
    std::map<std::string, std::vector<char>> goal_states;   // task -> membership flags
    std::string default_task;
    double gamma = 0.9;
    std::vector<double> initial_distribution;
    // Decides goal membership from a feature vector alone (datasets carry
    // features, not state ids).
    std::function<bool(const std::vector<double>&, const std::string&)> goal_from_features;

    Observation observe(int s) const {
        if (s < 0 || s >= n_states) throw UsageError("observe: state id out of range");
        return Observation{s, features[s]};
    }

    bool is_goal(int s, const std::string& task) const {
        auto it = goal_states.find(task);
        if (it == goal_states.end()) throw ConfigError("unknown task '" + task + "' for env '" + id + "'");
        return it->second[s] != 0;
    }

    double reward(int s, const std::string& task) const { return is_goal(s, task) ? 1.0 : 0.0; }

    StepResult step(int s, int a, const std::string& task) const {
        if (s < 0 || s >= n_states) throw UsageError("step: state id out of range");
        if (a < 0 || a >= n_actions) throw UsageError("step: action id out of range");
        return StepResult{next_state[s][a], reward(s, task), false};
    }

    // Exact tabular view for a task: reward 1 for any action taken in a goal
    // state, no terminal states.
    TabularMDP tabular(const std::string& task) const {
        TabularMDP mdp;
        mdp.n_states = n_states;
        mdp.n_actions = n_actions;
        mdp.gamma = gamma;
        mdp.initial_distribution = initial_distribution;
        mdp.transition.assign(n_states, std::vector<std::vector<double>>(
                                             n_actions, std::vector<double>(n_states, 0.0)));
        mdp.reward.assign(n_states, std::vector<double>(n_actions, 0.0));
        for (int s = 0; s < n_states; ++s) {
            double r = reward(s, task);
            for (int a = 0; a < n_actions; ++a) {
                mdp.transition[s][a][next_state[s][a]] = 1.0;
                mdp.reward[s][a] = r;
            }
        }
        mdp.validate();
        return mdp;
    }
};

// ---------------------------------------------------------------------------
// Column World: rows x cols grid, actions left/right/up/down, reward 1 for
// any action executed in the rightmost column. Coarsest bisimulation groups
// states by column.
// ---------------------------------------------------------------------------

enum ColumnWorldAction { kLeft = 0, kRight = 1, kUp = 2, kDown = 3 };

inline EnvInstance column_world(int rows, int cols, double gamma = 0.9) {
    if (rows < 1 || cols < 2) throw ConfigError("column_world: need rows >= 1 and cols >= 2");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("column_world: gamma must be in [0, 1)");
    EnvInstance env;
    env.id = "column_world";
    env.n_states = rows * cols;
    env.n_actions = 4;
    env.feature_dim = env.n_states;
    env.gamma = gamma;
    env.default_task = "reach_right";
    env.task_names = {"reach_right"};
    env.features.assign(env.n_states, std::vector<double>(env.feature_dim, 0.0));
    env.labels.resize(env.n_states);
    env.next_state.assign(env.n_states, std::vector<int>(4, 0));
    std::vector<char> goal(env.n_states, 0);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            int s = r * cols + c;
            env.features[s][s] = 1.0;
            env.labels[s] = c;
            goal[s] = (c == cols - 1) ? 1 : 0;
            auto clamp_state = [&](int rr, int cc) {
                rr = std::max(0, std::min(rows - 1, rr));
                cc = std::max(0, std::min(cols - 1, cc));
                return rr * cols + cc;
            };
            env.next_state[s][kLeft] = clamp_state(r, c - 1);
            env.next_state[s][kRight] = clamp_state(r, c + 1);
            env.next_state[s][kUp] = clamp_state(r - 1, c);
            env.next_state[s][kDown] = clamp_state(r + 1, c);
        }
    }
    env.n_labels = cols;
    env.goal_states["reach_right"] = std::move(goal);
    env.initial_distribution.assign(env.n_states, 1.0 / env.n_states);
    env.goal_from_features = [cols](const std::vector<double>& f, const std::string&) {
        int s = argmax(std::span<const double>(f.data(), f.size()));
        return s % cols == cols - 1;
    };
    return env;
}

// ---------------------------------------------------------------------------
// Symbolic shapes world: objects with shapes stacked on a grid, PICK/PLACE
// actions per cell. Features expose per-cell stack heights and a held flag
// but not shape identity; ground-truth labels erase shapes.
// ---------------------------------------------------------------------------

namespace shapes {

// Structural state: per-cell stacks of shape ids, plus the held shape (-1 if
// the hand is empty).
struct State {
    std::vector<std::vector<int>> stacks;
    int held = -1;

    std::vector<int> key() const {
        std::vector<int> k;
        for (const auto& st : stacks) {
            k.push_back(static_cast<int>(st.size()));
            k.insert(k.end(), st.begin(), st.end());
        }
        k.push_back(held);
        return k;
    }
};

// Shape-erased canonical form: stack heights and hand occupancy.
inline std::vector<int> erased_key(const State& s) {
    std::vector<int> k;
    for (const auto& st : s.stacks) k.push_back(static_cast<int>(st.size()));
    k.push_back(s.held >= 0 ? 1 : 0);
    return k;
}

// PICK(cell) for action < n_cells, PLACE(cell - n_cells) otherwise.
// Illegal actions leave the state unchanged.
inline State apply_action(const State& s, int action) {
    int n_cells = static_cast<int>(s.stacks.size());
    State out = s;
    if (action < n_cells) {
        int cell = action;
        if (out.held < 0 && !out.stacks[cell].empty()) {
            out.held = out.stacks[cell].back();
            out.stacks[cell].pop_back();
        }
    } else {
        int cell = action - n_cells;
        if (out.held >= 0) {
            out.stacks[cell].push_back(out.held);
            out.held = -1;
        }
    }
    return out;
}

}  // namespace shapes

// Extra hooks the shapes env exposes beyond the EnvInstance tables: the
// structural states behind each id and the label function on raw states,
// used to check shape-permutation invariance.
struct ShapesEnv {
    EnvInstance env;
    int grid = 0;
    int n_objects = 0;
    int n_shape_types = 0;
    std::vector<shapes::State> states;                 // by state id
    std::map<std::vector<int>, int> label_of_erased;   // erased key -> label id

    int label_of(const shapes::State& s) const {
        auto it = label_of_erased.find(shapes::erased_key(s));
        if (it == label_of_erased.end()) throw UsageError("label_of: state outside the enumerated space");
        return it->second;
    }
};

inline ShapesEnv symbolic_shapes(int grid, int n_objects, int n_shape_types, double gamma = 0.9) {
    if (grid < 2) throw ConfigError("symbolic_shapes: need grid >= 2x2");
    if (n_objects < 2) throw ConfigError("symbolic_shapes: need n_objects >= 2");
    if (n_shape_types < 1) throw ConfigError("symbolic_shapes: need n_shape_types >= 1");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("symbolic_shapes: gamma must be in [0, 1)");

    int n_cells = grid * grid;
    // Fixed object multiset: object i carries shape i mod n_shape_types.
    std::vector<int> object_shapes(n_objects);
    for (int i = 0; i < n_objects; ++i) object_shapes[i] = i % n_shape_types;

    // Enumerate every distinct configuration of the shape multiset: hand
    // empty or holding one shape, the rest distributed into ordered stacks.
    std::map<std::vector<int>, shapes::State> by_key;
    std::function<void(shapes::State&, std::vector<int>&)> place =
        [&](shapes::State& st, std::vector<int>& remaining) {
            if (remaining.empty()) {
                by_key.emplace(st.key(), st);
                return;
            }
            int prev = -2;
            for (std::size_t i = 0; i < remaining.size(); ++i) {
                int shape = remaining[i];
                if (shape == prev) continue;  // skip duplicate shapes at this level
                prev = shape;
                std::vector<int> rest = remaining;
                rest.erase(rest.begin() + static_cast<long>(i));
                for (int c = 0; c < n_cells; ++c) {
                    st.stacks[c].push_back(shape);
                    place(st, rest);
                    st.stacks[c].pop_back();
                }
            }
        };
    std::vector<int> sorted_shapes = object_shapes;
    std::sort(sorted_shapes.begin(), sorted_shapes.end());
    {
        shapes::State st;
        st.stacks.assign(n_cells, {});
        st.held = -1;
        std::vector<int> rem = sorted_shapes;
        place(st, rem);
        int prev = -2;
        for (std::size_t i = 0; i < sorted_shapes.size(); ++i) {
            if (sorted_shapes[i] == prev) continue;
            prev = sorted_shapes[i];
            st.held = sorted_shapes[i];
            std::vector<int> rest = sorted_shapes;
            rest.erase(rest.begin() + static_cast<long>(i));
            place(st, rest);
            st.held = -1;
        }
    }

    ShapesEnv world;
    world.grid = grid;
    world.n_objects = n_objects;
    world.n_shape_types = n_shape_types;
    std::map<std::vector<int>, int> id_of_key;
    for (const auto& [key, st] : by_key) {
        id_of_key.emplace(key, static_cast<int>(world.states.size()));
        world.states.push_back(st);
    }

    EnvInstance& env = world.env;
    env.id = "symbolic_shapes";
    env.n_states = static_cast<int>(world.states.size());
    env.n_actions = 2 * n_cells;
    env.feature_dim = n_cells + 1;
    env.gamma = gamma;
    env.default_task = "stack";
    env.task_names = {"stack", "row", "diag"};

    // Labels: distinct shape-erased configurations, ids in sorted key order.
    for (const auto& st : world.states) {
        world.label_of_erased.emplace(shapes::erased_key(st), 0);
    }
    int next_label = 0;
    for (auto& [key, lbl] : world.label_of_erased) lbl = next_label++;
    env.n_labels = next_label;

    env.features.resize(env.n_states);
    env.labels.resize(env.n_states);
    env.next_state.assign(env.n_states, std::vector<int>(env.n_actions, 0));
    for (int s = 0; s < env.n_states; ++s) {
        const shapes::State& st = world.states[s];
        std::vector<double> f;
        for (const auto& stack : st.stacks) f.push_back(static_cast<double>(stack.size()));
        f.push_back(st.held >= 0 ? 1.0 : 0.0);
        env.features[s] = std::move(f);
        env.labels[s] = world.label_of(st);
        for (int a = 0; a < env.n_actions; ++a) {
            env.next_state[s][a] = id_of_key.at(shapes::apply_action(st, a).key());
        }
    }

    // Goal predicates on the feature encoding (heights + held flag), which is
    // all a dataset transition carries.
    auto heights_goal = [grid, n_cells, n_objects](const std::vector<double>& f, const std::string& task) {
        bool hand_empty = f[n_cells] < 0.5;
        if (!hand_empty) return false;
        auto h = [&](int r, int c) { return static_cast<int>(f[static_cast<std::size_t>(r) * grid + c] + 0.5); };
        if (task == "stack") {
            for (int c = 0; c < n_cells; ++c) {
                if (static_cast<int>(f[c] + 0.5) == n_objects) return true;
            }
            return false;
        }
        if (task == "row" || task == "diag") {
            // n_objects singles on contiguous cells: horizontal for "row",
            // either diagonal direction for "diag".
            for (int c = 0; c < n_cells; ++c) {
                int hc = static_cast<int>(f[c] + 0.5);
                if (hc != 0 && hc != 1) return false;
            }
            std::vector<std::pair<int, int>> dirs =
                (task == "row") ? std::vector<std::pair<int, int>>{{0, 1}}
                                : std::vector<std::pair<int, int>>{{1, 1}, {1, -1}};
            for (auto [dr, dc] : dirs) {
                for (int r = 0; r < grid; ++r) {
                    for (int c = 0; c < grid; ++c) {
                        int rr = r + dr * (n_objects - 1);
                        int cc = c + dc * (n_objects - 1);
                        if (rr < 0 || rr >= grid || cc < 0 || cc >= grid) continue;
                        bool ok = true;
                        int count = 0;
                        for (int k = 0; k < n_objects; ++k) {
                            if (h(r + dr * k, c + dc * k) != 1) { ok = false; break; }
                            ++count;
                        }
                        if (ok && count == n_objects) {
                            // all remaining cells must be empty
                            int total = 0;
                            for (int cell = 0; cell < n_cells; ++cell) total += static_cast<int>(f[cell] + 0.5);
                            if (total == n_objects) return true;
                        }
                    }
                }
            }
            return false;
        }
        throw ConfigError("unknown task '" + task + "' for env 'symbolic_shapes'");
    };
    env.goal_from_features = heights_goal;

    for (const std::string& task : env.task_names) {
        std::vector<char> goal(env.n_states, 0);
        for (int s = 0; s < env.n_states; ++s) {
            goal[s] = heights_goal(env.features[s], task) ? 1 : 0;
        }
        env.goal_states[task] = std::move(goal);
    }

    // Start uniformly over hand-empty placements.
    std::vector<int> starts;
    for (int s = 0; s < env.n_states; ++s) {
        if (world.states[s].held < 0) starts.push_back(s);
    }
    env.initial_distribution.assign(env.n_states, 0.0);
    for (int s : starts) env.initial_distribution[s] = 1.0 / static_cast<double>(starts.size());

    return world;
}

}  // namespace vibsim
