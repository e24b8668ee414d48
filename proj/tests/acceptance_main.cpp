// End-to-end acceptance checks. Each numbered check prints exactly one
// PASS/FAIL line; the binary exits nonzero if any check fails. Seeds, dataset
// sizes, and training budgets are pinned so every number below is reproducible.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "vibsim/abstraction.hpp"
#include "vibsim/baseline.hpp"
#include "vibsim/dqn.hpp"
#include "vibsim/envs.hpp"
#include "vibsim/idealized.hpp"
#include "vibsim/pipeline.hpp"
#include "vibsim/vib_train.hpp"
#include "test_helpers.hpp"

using namespace vibsim;

namespace {

std::string fmt(const char* f, ...) {
    char buf[768];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

struct Outcome {
    bool ok = false;
    std::string detail = "not run";
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int column_of(int s) { return s % 3; }  // 30x3 grid, states laid out row-major

// Two separated feature clusters with cluster-constant labels; enough
// structure for gradient checks without any training.
TransitionDataset two_cluster_dataset(int n, Rng& rng) {
    TransitionDataset ds;
    ds.env_id = "toy";
    ds.n_actions = 2;
    ds.n_tasks = 1;
    std::normal_distribution<double> jitter(0.0, 0.05);
    std::uniform_int_distribution<int> coin(0, 1);
    for (int i = 0; i < n; ++i) {
        int c = coin(rng);
        int c_next = coin(rng);
        LabeledTransition tr;
        tr.s_t.state_id = c;
        tr.s_t.features = {c ? 4.0 + jitter(rng) : -4.0 + jitter(rng), jitter(rng)};
        tr.a = coin(rng);
        tr.s_next.state_id = c_next;
        tr.s_next.features = {c_next ? 4.0 + jitter(rng) : -4.0 + jitter(rng), jitter(rng)};
        tr.y = c ? std::vector<double>{1.0, 0.5} : std::vector<double>{-1.0, -0.5};
        ds.transitions.push_back(tr);
    }
    return ds;
}

// Exact 3-block column abstraction of the 30x3 grid, lifted into K components:
// blocks 0..2 are the columns, blocks 3..K-1 are unused self-loop padding.
struct ColumnTables {
    std::vector<int> assignment;                            // state -> component
    std::vector<std::vector<double>> q;                     // K x actions
    std::vector<std::vector<std::vector<double>>> trans;    // action x K x K
};

ColumnTables exact_column_tables(const EnvInstance& env, int K) {
    AbstractMDP blocks;
    blocks.K = 3;
    blocks.n_actions = env.n_actions;
    blocks.gamma = env.gamma;
    blocks.transition.assign(env.n_actions,
                             std::vector<std::vector<double>>(3, std::vector<double>(3, 0.0)));
    blocks.reward.assign(3, std::vector<double>(env.n_actions, 0.0));
    for (int c = 0; c < 3; ++c) {
        int rep = c;  // row 0 representative of the column
        for (int a = 0; a < env.n_actions; ++a) {
            blocks.transition[a][c][column_of(env.next_state[rep][a])] = 1.0;
            blocks.reward[c][a] = env.reward(rep, "reach_right");
        }
    }
    QTable q3 = value_iteration(blocks, 1e-12);

    ColumnTables t;
    t.assignment.resize(env.n_states);
    for (int s = 0; s < env.n_states; ++s) t.assignment[s] = column_of(s);
    t.q.assign(K, std::vector<double>(env.n_actions, 0.0));
    for (int c = 0; c < 3; ++c) t.q[c] = q3.values[c];
    t.trans.assign(env.n_actions, std::vector<std::vector<double>>(K, std::vector<double>(K, 0.0)));
    for (int a = 0; a < env.n_actions; ++a) {
        for (int k = 0; k < K; ++k) {
            if (k < 3) {
                for (int l = 0; l < 3; ++l) t.trans[a][k][l] = blocks.transition[a][k][l];
            } else {
                t.trans[a][k][k] = 1.0;
            }
        }
    }
    return t;
}

TransitionDataset enumerate_transitions(const EnvInstance& env, const std::string& task,
                                        const std::vector<std::vector<double>>& y_of_state) {
    TransitionDataset ds;
    ds.env_id = env.id;
    ds.n_actions = env.n_actions;
    ds.n_tasks = 1;
    for (int s = 0; s < env.n_states; ++s) {
        for (int a = 0; a < env.n_actions; ++a) {
            StepResult sr = env.step(s, a, task);
            LabeledTransition tr;
            tr.s_t = {s, env.features[s]};
            tr.a = a;
            tr.r = sr.reward;
            tr.s_next = {sr.next_state, env.features[sr.next_state]};
            tr.y = y_of_state[s];
            ds.transitions.push_back(tr);
        }
    }
    return ds;
}

// Row-sum audit shared state for check 9.
struct RowAudit {
    double worst = 0.0;
    long rows = 0;
    std::string worst_tag;

    void row(const std::vector<double>& r, const std::string& tag) {
        double s = 0.0;
        for (double p : r) s += p;
        double dev = std::abs(s - 1.0);
        ++rows;
        if (dev > worst) {
            worst = dev;
            worst_tag = tag;
        }
    }
};

}  // namespace

int main() {
    std::vector<Outcome> out(10);
    EnvInstance cw = column_world(30, 3);
    RowAudit audit;

    // Shared Column World artifacts: one behavior policy, one exploitation
    // dataset (behavior epsilon 0.3) and one exploratory dataset (epsilon 1.0).
    QNetwork cw_dqn;
    TransitionDataset cw_data, cw_explore;
    try {
        Rng drng(derive_seed(42, detail::kSeedDqn));
        DqnTrainConfig dcfg;
        cw_dqn = train_dqn(cw, "reach_right", dcfg, drng).net;
        {
            Rng crng(derive_seed(42, detail::kSeedCollect));
            cw_data = collect_dataset(cw, {"reach_right"}, {cw_dqn}, 20000, 0.3, 50, crng, 42);
        }
        {
            Rng crng(derive_seed(42, detail::kSeedCollect));
            cw_explore = collect_dataset(cw, {"reach_right"}, {cw_dqn}, 20000, 1.0, 50, crng, 42);
        }
    } catch (const std::exception& e) {
        std::printf("FAIL setup: %s\n", e.what());
        return 1;
    }

    // --- 1: learned abstraction quality over the pinned seed set ------------
    VibModel kept_model;  // reused by checks 8 and 9
    bool have_kept = false;
    try {
        std::vector<double> purities;
        int worst_size = 0;
        double worst_time = 0.0;
        bool sizes_ok = true;
        for (int i = 0; i < 10; ++i) {
            auto t0 = std::chrono::steady_clock::now();
            Rng rng(derive_seed(100 + static_cast<std::uint64_t>(i), 2));
            VibConfig cfg;  // defaults: HMM prior, K=6, d=4, 8000 steps
            VibTrainResult r = train_vib(cw_data, cfg, rng);
            AbstractionMap am = build_abstraction_map(r.model, cw);
            purities.push_back(purity(am.assign, cw.labels));
            int size = effective_num_states(am.assign);
            worst_size = std::max(worst_size, size);
            sizes_ok = sizes_ok && size <= 6;
            worst_time = std::max(worst_time, seconds_since(t0));
            if (i == 0) {
                kept_model = r.model;
                have_kept = true;
            }
        }
        std::sort(purities.begin(), purities.end());
        double median = 0.5 * (purities[4] + purities[5]);
        bool ok = median >= 0.95 && sizes_ok && worst_time <= 600.0;
        out[1] = {ok, fmt("median purity %.4f (>= 0.95), abstraction size <= %d (<= 6), "
                          "slowest seed %.0f s (<= 600)",
                          median, worst_size, worst_time)};
    } catch (const std::exception& e) {
        out[1] = {false, fmt("exception: %s", e.what())};
    }

    // --- 2: greedy partition baseline, oracle vs learned---------------------
    try {
        ForwardModel oracle = oracle_forward_model(cw.tabular("reach_right"));
        int oracle_blocks = greedy_approx_bisimulation(oracle, cw.n_states, cw.n_actions, 0.5).size();

        // Learned models: exploratory data, fixed 800-step training budget so
        // differences across dataset sizes reflect the data alone.
        int sizes[4] = {1000, 5000, 10000, 20000};
        int blocks[4] = {0, 0, 0, 0};
        for (int idx = 0; idx < 4; ++idx) {
            TransitionDataset sub = dataset_prefix(cw_explore, sizes[idx]);
            Rng frng(derive_seed(42, 40 + static_cast<std::uint64_t>(idx)));
            ForwardModelConfig fcfg;
            fcfg.steps = 800;
            ForwardModel fm = train_forward_model(sub, cw.n_states, fcfg, frng);
            blocks[idx] = greedy_approx_bisimulation(fm, cw.n_states, cw.n_actions, 0.5).size();
        }
        bool low_data_fragmenting = blocks[0] >= 60 && blocks[1] >= 60;
        bool non_increasing = blocks[0] >= blocks[1] && blocks[1] >= blocks[2] &&
                              blocks[2] >= blocks[3];
        bool ok = oracle_blocks == 3 && low_data_fragmenting && non_increasing;
        out[2] = {ok, fmt("oracle %d blocks (= 3); learned %d/%d/%d/%d blocks at "
                          "1000/5000/10000/20000 samples (<= 5000 gives >= 60, non-increasing)",
                          oracle_blocks, blocks[0], blocks[1], blocks[2], blocks[3])};
    } catch (const std::exception& e) {
        out[2] = {false, fmt("exception: %s", e.what())};
    }

    // --- 3: table-based loss at the exact column abstraction ----------------
    try {
        int K = 6;
        double beta = 0.1;
        ColumnTables tables = exact_column_tables(cw, K);
        std::vector<std::vector<double>> y_of_state(cw.n_states);
        for (int s = 0; s < cw.n_states; ++s) y_of_state[s] = tables.q[column_of(s)];
        TransitionDataset ds = enumerate_transitions(cw, "reach_right", y_of_state);

        double base = idealized_loss(tables.assignment, tables.q, tables.trans, ds, beta);
        double target = beta * std::log(static_cast<double>(K));
        double gap = std::abs(base - target);

        Rng merge_rng(4242);
        double min_excess = std::numeric_limits<double>::infinity();
        int worse = 0;
        for (int trial = 0; trial < 20; ++trial) {
            // merge the rewarding column with a non-rewarding one, either way
            int other = static_cast<int>(merge_rng() % 2);
            bool into_other = merge_rng() % 2 == 0;
            int src = into_other ? 2 : other;
            int dst = into_other ? other : 2;
            std::vector<int> merged = tables.assignment;
            for (int& c : merged) {
                if (c == src) c = dst;
            }
            double loss = idealized_loss(merged, tables.q, tables.trans, ds, beta);
            if (loss > base) ++worse;
            min_excess = std::min(min_excess, loss - base);
        }
        bool ok = gap <= 1e-6 && worse == 20;
        out[3] = {ok, fmt("loss at exact abstraction within %.2e of beta*log K (<= 1e-6); "
                          "20/20 reward-inconsistent merges larger (min excess %g)",
                          gap, min_excess)};
    } catch (const std::exception& e) {
        out[3] = {false, fmt("exception: %s", e.what())};
    }

    // --- 4: analytic gradients vs central finite differences ----------------
    try {
        double worst = 0.0;
        std::string worst_param;
        for (int b = 0; b < 100; ++b) {
            std::string kind = b % 2 == 0 ? "gmm" : "hmm";
            Rng data_rng(derive_seed(500, static_cast<std::uint64_t>(b)));
            TransitionDataset ds = two_cluster_dataset(6, data_rng);
            VibConfig cfg;
            cfg.prior_kind = kind;
            cfg.K = 2 + b % 3;
            cfg.d = 1 + (b / 2) % 3;
            cfg.encoder_hidden = b % 4 < 2 ? std::vector<int>{} : std::vector<int>{5};
            Rng mrng(derive_seed(600, static_cast<std::uint64_t>(b)));
            VibModel model = make_vib_model(cfg, 2, 2, 1, mrng);
            std::vector<int> idx = {0, 1, 2, 3, 4, 5};
            VibBatch batch = make_vib_batch(ds, idx);
            nn::Tensor noise_t(6, cfg.d), noise_n(6, cfg.d);
            Rng nrng(derive_seed(700, static_cast<std::uint64_t>(b)));
            draw_noise(noise_t, nrng);
            draw_noise(noise_n, nrng);
            VibLossGraph lg = build_vib_loss(model, batch, noise_t, noise_n, 0.1 + 0.2 * (b % 2));
            test::GradCheckResult check = test::finite_difference_check(lg.g, lg.loss, model.params());
            if (check.max_rel_err > worst) {
                worst = check.max_rel_err;
                worst_param = check.worst_param;
            }
        }
        out[4] = {worst < 1e-4, fmt("max relative error %.2e over 100 batches, both priors "
                                    "(< 1e-4, worst at %s)",
                                    worst, worst_param.c_str())};
    } catch (const std::exception& e) {
        out[4] = {false, fmt("exception: %s", e.what())};
    }

    // --- 5: value iteration against closed forms ----------------------------
    try {
        QTable q = value_iteration(test::chain_abstract_mdp(), 1e-12);
        double v[3];
        for (int k = 0; k < 3; ++k) v[k] = *std::max_element(q.values[k].begin(), q.values[k].end());
        double expect[3] = {8.1, 9.0, 10.0};
        double worst_gap = 0.0;
        for (int k = 0; k < 3; ++k) worst_gap = std::max(worst_gap, std::abs(v[k] - expect[k]));

        Rng rng(777);
        double worst_residual = 0.0;
        for (int i = 0; i < 100; ++i) {
            int K = 2 + static_cast<int>(rng() % 9);
            int A = 2 + static_cast<int>(rng() % 3);
            AbstractMDP mdp = test::random_abstract_mdp(K, A, rng);
            QTable rq = value_iteration(mdp, 1e-8);
            worst_residual = std::max(worst_residual, bellman_residual(mdp, rq));
        }
        bool ok = worst_gap <= 1e-6 && worst_residual < 1e-7;
        out[5] = {ok, fmt("chain values (%.6f, %.6f, %.6f) within %.1e of (10, 9, 8.1); "
                          "worst residual %.2e over 100 random MDPs (< 1e-7)",
                          v[2], v[1], v[0], worst_gap, worst_residual)};
    } catch (const std::exception& e) {
        out[5] = {false, fmt("exception: %s", e.what())};
    }

    // --- 6: purity against a brute-force reimplementation -------------------
    try {
        Rng rng(31337);
        int agree = 0;
        for (int i = 0; i < 100; ++i) {
            int n = 1 + static_cast<int>(rng() % 200);
            int blocks = 1 + static_cast<int>(rng() % 20);
            int n_labels = 1 + static_cast<int>(rng() % 6);
            std::vector<int> assign(n), labels(n);
            for (int s = 0; s < n; ++s) {
                assign[s] = static_cast<int>(rng() % static_cast<std::uint64_t>(blocks));
                labels[s] = static_cast<int>(rng() % static_cast<std::uint64_t>(n_labels));
            }
            if (purity(assign, labels) == test::brute_force_purity(assign, labels)) ++agree;
        }
        out[6] = {agree == 100, fmt("%d/100 random instances match exactly", agree)};
    } catch (const std::exception& e) {
        out[6] = {false, fmt("exception: %s", e.what())};
    }

    // --- 7: planning for a goal the model never trained on ------------------
    VibModel shapes_model;  // reused by check 9
    bool have_shapes = false;
    ShapesEnv shapes = symbolic_shapes(2, 2, 2);
    TransitionDataset shapes_data;
    try {
        EnvInstance& env = shapes.env;
        Rng drng(derive_seed(11, detail::kSeedDqn));
        DqnTrainConfig dcfg;
        QNetwork net = train_dqn(env, "stack", dcfg, drng).net;
        Rng crng(derive_seed(11, detail::kSeedCollect));
        shapes_data = collect_dataset(env, {"stack"}, {net}, 20000, 1.0, 50, crng, 11);

        Rng vrng(derive_seed(11, detail::kSeedVib));
        VibConfig cfg;
        cfg.K = 20;
        cfg.d = 8;
        cfg.sigma_y = 0.5;
        cfg.steps = 16000;
        shapes_model = train_vib(shapes_data, cfg, vrng).model;
        have_shapes = true;

        AbstractMDP amdp = build_abstract_mdp(shapes_model, shapes_data,
                                              make_goal_predicate(env, "row"), env.gamma);
        QTable q = value_iteration(amdp);
        std::vector<std::vector<double>> policy = softmax_policy(q, 0.1);
        for (std::size_t k = 0; k < policy.size(); ++k) {
            audit.row(policy[k], fmt("shapes row-task policy row %zu", k));
        }

        std::uint64_t eval_seed = derive_seed(11, detail::kSeedEval + 1);  // "row" slot
        Rng r1(eval_seed);
        PolicyEvalResult planned = evaluate_policy(env, shapes_model, policy, "row", 20, 4000, r1);
        Rng r2(eval_seed);
        auto random_act = [&](int, Rng& er) {
            return static_cast<int>(er() % static_cast<std::uint64_t>(env.n_actions));
        };
        PolicyEvalResult random = evaluate_ground_policy(env, "row", random_act, 20, 4000, r2);

        bool ok = planned.success_rate >= 0.80 &&
                  planned.success_rate - random.success_rate >= 0.4;
        out[7] = {ok, fmt("unseen-goal success %.3f (>= 0.80), random baseline %.3f "
                          "(margin %.3f >= 0.4) over 4000 paired episodes",
                          planned.success_rate, random.success_rate,
                          planned.success_rate - random.success_rate)};
    } catch (const std::exception& e) {
        out[7] = {false, fmt("exception: %s", e.what())};
    }

    // --- 8: value compression preserves greedy control -----------------------
    try {
        if (!have_kept) throw TrainingError("no model kept from check 1");
        QTable mq = mean_q(kept_model, cw_data, 0);
        std::vector<std::vector<double>> greedy(
            static_cast<std::size_t>(kept_model.config.K),
            std::vector<double>(static_cast<std::size_t>(cw.n_actions), 0.0));
        for (int k = 0; k < kept_model.config.K; ++k) {
            const std::vector<double>& row = mq.values[k];
            int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            greedy[static_cast<std::size_t>(k)][static_cast<std::size_t>(best)] = 1.0;
        }
        std::uint64_t eval_seed = derive_seed(42, detail::kSeedEval);
        Rng r1(eval_seed);
        PolicyEvalResult compressed = evaluate_policy(cw, kept_model, greedy, "reach_right",
                                                      50, 100, r1);
        Rng r2(eval_seed);
        auto dqn_act = [&](int s, Rng&) {
            std::vector<double> qv = cw_dqn.q_values(cw.features[s]);
            return static_cast<int>(std::max_element(qv.begin(), qv.end()) - qv.begin());
        };
        PolicyEvalResult raw = evaluate_ground_policy(cw, "reach_right", dqn_act, 50, 100, r2);
        bool ok = compressed.episode_return.mean >= 0.9 * raw.episode_return.mean;
        out[8] = {ok, fmt("compressed-Q greedy return %.2f vs DQN greedy %.2f over 100 paired "
                          "episodes (ratio %.3f >= 0.9)",
                          compressed.episode_return.mean, raw.episode_return.mean,
                          compressed.episode_return.mean / raw.episode_return.mean)};
    } catch (const std::exception& e) {
        out[8] = {false, fmt("exception: %s", e.what())};
    }

    // --- 9: every probability row sums to one -------------------------------
    try {
        TabularMDP cw_tab = cw.tabular("reach_right");
        for (int s = 0; s < cw_tab.n_states; ++s) {
            for (int a = 0; a < cw_tab.n_actions; ++a) {
                audit.row(cw_tab.transition[s][a], fmt("column world transition s=%d a=%d", s, a));
            }
        }
        audit.row(cw.initial_distribution, "column world initial distribution");
        TabularMDP sh_tab = shapes.env.tabular("stack");
        for (int s = 0; s < sh_tab.n_states; ++s) {
            for (int a = 0; a < sh_tab.n_actions; ++a) {
                audit.row(sh_tab.transition[s][a], fmt("shapes transition s=%d a=%d", s, a));
            }
        }
        audit.row(shapes.env.initial_distribution, "shapes initial distribution");

        for (VibModel* model : {have_kept ? &kept_model : nullptr,
                                have_shapes ? &shapes_model : nullptr}) {
            if (model == nullptr) continue;
            HmmPrior prior = model->hmm_prior();
            for (int r = 0; r < prior.log_transition.rows; ++r) {
                std::vector<double> row(static_cast<std::size_t>(prior.log_transition.cols));
                for (int c = 0; c < prior.log_transition.cols; ++c) {
                    row[static_cast<std::size_t>(c)] = std::exp(prior.log_transition.at(r, c));
                }
                audit.row(row, fmt("prior transition row %d", r));
            }
        }
        if (have_kept) {
            MixtureParams mix = kept_model.mixture();
            for (int s = 0; s < cw.n_states; ++s) {
                audit.row(posterior_over_components(kept_model.encode(cw.features[s]).mean, mix),
                          fmt("column world posterior s=%d", s));
            }
            AbstractMDP amdp = build_abstract_mdp(kept_model, cw_data,
                                                  make_goal_predicate(cw, "reach_right"), cw.gamma);
            for (int a = 0; a < amdp.n_actions; ++a) {
                for (int k = 0; k < amdp.K; ++k) {
                    audit.row(amdp.transition[a][k], fmt("abstract transition a=%d k=%d", a, k));
                }
            }
            std::vector<std::vector<double>> policy = softmax_policy(value_iteration(amdp), 0.1);
            for (std::size_t k = 0; k < policy.size(); ++k) {
                audit.row(policy[k], fmt("column world policy row %zu", k));
            }
        }
        if (have_shapes) {
            MixtureParams mix = shapes_model.mixture();
            for (int s = 0; s < shapes.env.n_states; ++s) {
                audit.row(posterior_over_components(shapes_model.encode(shapes.env.features[s]).mean,
                                                    mix),
                          fmt("shapes posterior s=%d", s));
            }
        }
        bool ok = audit.worst <= 1e-9 && audit.rows > 0;
        out[9] = {ok, fmt("worst |row sum - 1| = %.2e over %ld rows (<= 1e-9%s%s)",
                          audit.worst, audit.rows, audit.worst > 1e-9 ? ", worst: " : "",
                          audit.worst > 1e-9 ? audit.worst_tag.c_str() : "")};
    } catch (const std::exception& e) {
        out[9] = {false, fmt("exception: %s", e.what())};
    }

    int failures = 0;
    for (int i = 1; i <= 9; ++i) {
        std::printf("%s %d: %s\n", out[i].ok ? "PASS" : "FAIL", i, out[i].detail.c_str());
        if (!out[i].ok) ++failures;
    }
    std::printf("%d/9 checks passed\n", 9 - failures);
    return failures == 0 ? 0 : 1;
}
