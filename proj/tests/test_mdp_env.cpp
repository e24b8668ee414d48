#include <catch2/catch_amalgamated.hpp>

#include <deque>
#include <set>

#include "test_helpers.hpp"
#include "vibsim/envs.hpp"

using namespace vibsim;

namespace {

// Steps to the nearest goal state over the deterministic move table.
std::vector<int> bfs_goal_distance(const EnvInstance& env, const std::string& task) {
    std::vector<int> dist(env.n_states, -1);
    std::deque<int> queue;
    for (int s = 0; s < env.n_states; ++s) {
        if (env.is_goal(s, task)) {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    // reverse BFS over predecessors
    std::vector<std::vector<int>> preds(env.n_states);
    for (int s = 0; s < env.n_states; ++s) {
        for (int a = 0; a < env.n_actions; ++a) preds[env.next_state[s][a]].push_back(s);
    }
    while (!queue.empty()) {
        int s = queue.front();
        queue.pop_front();
        for (int p : preds[s]) {
            if (dist[p] == -1) {
                dist[p] = dist[s] + 1;
                queue.push_back(p);
            }
        }
    }
    return dist;
}

}  // namespace

TEST_CASE("column world has the documented shape") {
    EnvInstance env = column_world(30, 3);
    REQUIRE(env.n_states == 90);
    REQUIRE(env.n_actions == 4);
    REQUIRE(env.n_labels == 3);
    REQUIRE(env.feature_dim == 90);
}

TEST_CASE("column world distance-to-goal equals the column offset") {
    EnvInstance env = column_world(30, 3);
    std::vector<int> dist = bfs_goal_distance(env, "reach_right");
    std::map<int, std::set<int>> labels_at_dist;
    for (int s = 0; s < env.n_states; ++s) {
        REQUIRE(dist[s] >= 0);
        REQUIRE(dist[s] <= 2);  // cols - 1
        labels_at_dist[dist[s]].insert(env.labels[s]);
    }
    // each distance ring is exactly one label block (the column)
    REQUIRE(labels_at_dist.size() == 3);
    std::set<int> seen;
    for (auto& [d, labs] : labels_at_dist) {
        REQUIRE(labs.size() == 1);
        seen.insert(*labs.begin());
    }
    REQUIRE(seen.size() == 3);
}

TEST_CASE("column world rewards follow the current column") {
    EnvInstance env = column_world(30, 3);
    for (int s = 0; s < env.n_states; ++s) {
        bool goal = env.is_goal(s, "reach_right");
        for (int a = 0; a < env.n_actions; ++a) {
            StepResult sr = env.step(s, a, "reach_right");
            REQUIRE(sr.reward == (goal ? 1.0 : 0.0));
            REQUIRE_FALSE(sr.done);
        }
    }
}

TEST_CASE("minimal column world matches the two-state contract") {
    EnvInstance env = column_world(1, 2);
    REQUIRE(env.n_states == 2);
    int goal = env.is_goal(0, "reach_right") ? 0 : 1;
    for (int a = 0; a < env.n_actions; ++a) {
        REQUIRE(env.step(goal, a, "reach_right").reward == 1.0);
        REQUIRE(env.step(1 - goal, a, "reach_right").reward == 0.0);
    }
}

TEST_CASE("chain values under gamma 0.9 are 8.1, 9, 10 by distance") {
    EnvInstance env = column_world(1, 3);
    TabularMDP mdp = env.tabular("reach_right");
    auto q = tabular_q_optimal(mdp);
    std::vector<int> dist = bfs_goal_distance(env, "reach_right");
    for (int s = 0; s < env.n_states; ++s) {
        double v = q[s][argmax(q[s])];
        double expect = dist[s] == 0 ? 10.0 : dist[s] == 1 ? 9.0 : 8.1;
        REQUIRE(v == Catch::Approx(expect).margin(1e-6));
    }
}

TEST_CASE("tabular transition rows are distributions") {
    EnvInstance cw = column_world(5, 3);
    TabularMDP mdp = cw.tabular("reach_right");
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            REQUIRE(test::row_sums_to_one(mdp.transition[s][a], 1e-12));
        }
    }
    REQUIRE_NOTHROW(mdp.validate());

    ShapesEnv se = symbolic_shapes(2, 2, 2);
    TabularMDP smdp = se.env.tabular("stack");
    for (int s = 0; s < smdp.n_states; ++s) {
        for (int a = 0; a < smdp.n_actions; ++a) {
            REQUIRE(test::row_sums_to_one(smdp.transition[s][a], 1e-12));
        }
    }
}

TEST_CASE("deterministic steps repeat exactly") {
    EnvInstance env = column_world(4, 3);
    for (int s = 0; s < env.n_states; ++s) {
        for (int a = 0; a < env.n_actions; ++a) {
            StepResult r1 = env.step(s, a, "reach_right");
            StepResult r2 = env.step(s, a, "reach_right");
            REQUIRE(r1.next_state == r2.next_state);
            REQUIRE(r1.reward == r2.reward);
        }
    }
}

TEST_CASE("symbolic shapes enumerates the reachable configuration space") {
    ShapesEnv se = symbolic_shapes(2, 2, 2);
    const EnvInstance& env = se.env;
    REQUIRE(env.n_actions == 8);  // pick/place per cell
    REQUIRE(env.n_labels == 14);

    // independent breadth-first oracle over shape-erased configurations:
    // state = (per-cell heights, hand occupied)
    using Erased = std::pair<std::vector<int>, int>;
    std::set<Erased> seen;
    std::deque<Erased> queue;
    for (int c1 = 0; c1 < 4; ++c1) {
        for (int c2 = 0; c2 < 4; ++c2) {
            std::vector<int> h(4, 0);
            h[c1]++;
            h[c2]++;
            Erased e{h, 0};
            if (seen.insert(e).second) queue.push_back(e);
        }
    }
    while (!queue.empty()) {
        auto [h, held] = queue.front();
        queue.pop_front();
        for (int c = 0; c < 4; ++c) {
            auto pick = std::make_pair(h, held);
            if (held == 0 && h[c] > 0) {
                pick.first[c]--;
                pick.second = 1;
            }
            auto place = std::make_pair(h, held);
            if (held == 1) {
                place.first[c]++;
                place.second = 0;
            }
            for (const Erased& e : {pick, place}) {
                if (seen.insert(e).second) queue.push_back(e);
            }
        }
    }
    REQUIRE(static_cast<int>(seen.size()) == env.n_labels);

    // single shape type: ground states coincide with erased configurations
    ShapesEnv single = symbolic_shapes(2, 2, 1);
    REQUIRE(single.env.n_states == static_cast<int>(seen.size()));
    REQUIRE(single.env.n_labels == single.env.n_states);
}

TEST_CASE("shape identity never leaks into labels or features") {
    ShapesEnv se = symbolic_shapes(2, 2, 2);
    const EnvInstance& env = se.env;
    Rng rng(17);
    std::uniform_int_distribution<int> pick(0, env.n_states - 1);
    for (int trial = 0; trial < 100; ++trial) {
        int s = pick(rng), t = pick(rng);
        bool same_label = env.labels[s] == env.labels[t];
        bool same_features = env.features[s] == env.features[t];
        REQUIRE(same_label == same_features);
    }
    // every label block holds exactly the shape permutations of one configuration
    std::map<int, int> sizes;
    for (int l : env.labels) sizes[l]++;
    for (auto& [l, n] : sizes) REQUIRE(n == 2);
}

TEST_CASE("pick on an empty cell is a no-op") {
    ShapesEnv se = symbolic_shapes(2, 2, 2);
    const EnvInstance& env = se.env;
    int checked = 0;
    for (int s = 0; s < env.n_states; ++s) {
        for (int a = 0; a < env.n_actions; ++a) {
            if (env.next_state[s][a] == s) {
                StepResult sr = env.step(s, a, "stack");
                REQUIRE(sr.next_state == s);
                ++checked;
            }
        }
    }
    REQUIRE(checked > 0);
}

TEST_CASE("initial distributions are uniform over their supports") {
    EnvInstance cw = column_world(30, 3);
    for (double p : cw.initial_distribution) REQUIRE(p == Catch::Approx(1.0 / 90.0));

    ShapesEnv se = symbolic_shapes(2, 2, 2);
    int support = 0;
    double mass = 0.0;
    for (double p : se.env.initial_distribution) {
        if (p > 0.0) {
            ++support;
            mass += p;
        }
    }
    REQUIRE(support == 20);  // hand-empty placements of two objects
    REQUIRE(mass == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("goal predicates agree between state table and features") {
    ShapesEnv se = symbolic_shapes(2, 2, 2);
    const EnvInstance& env = se.env;
    for (const std::string& task : env.task_names) {
        for (int s = 0; s < env.n_states; ++s) {
            REQUIRE(env.goal_from_features(env.features[s], task) == env.is_goal(s, task));
        }
    }
}
