#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibsim/abstraction.hpp"
#include "vibsim/baseline.hpp"
#include "vibsim/config.hpp"
#include "vibsim/dqn.hpp"
#include "vibsim/vib_train.hpp"

namespace vibsim {

// Stable decimal text for CSV output; %.10g keeps files byte-reproducible
// without dragging in locale-dependent stream formatting.
inline std::string csv_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << content;
}

// Reports must never carry NaN/inf; fail loudly instead of emitting them.
inline void require_finite_json(const nlohmann::json& j, const std::string& path) {
    if (j.is_number_float() && !std::isfinite(j.get<double>())) {
        throw TrainingError("report value at '" + path + "' is not finite");
    }
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) require_finite_json(v, path.empty() ? k : path + "." + k);
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) require_finite_json(j[i], path + "[" + std::to_string(i) + "]");
    }
}

struct RunReport {
    std::uint64_t seed = 0;
    nlohmann::json config_echo;
    nlohmann::json stages = nlohmann::json::object();
    nlohmann::json artifacts = nlohmann::json::object();
    bool failed = false;
    std::string failure_stage;
    std::string failure_message;
    nlohmann::json timings = nlohmann::json::object();  // wall clock; separate file
};

inline nlohmann::json run_report_to_json(const RunReport& r) {
    nlohmann::json j{{"seed", r.seed},
                     {"config", r.config_echo},
                     {"stages", r.stages},
                     {"artifacts", r.artifacts}};
    if (r.failed) {
        j["failure"] = {{"stage", r.failure_stage}, {"message", r.failure_message}};
    }
    return j;
}

inline GoalPredicate make_goal_predicate(const EnvInstance& env, const std::string& task) {
    return [&env, task](const std::vector<double>& features) {
        return env.goal_from_features(features, task);
    };
}

// First n transitions, metadata preserved; used for dataset-size sweeps so
// smaller datasets are literal prefixes of the collected stream.
// Serialized datasets carry features only; rebind state ids by looking the
// features up in the env (needed by consumers that are tabular in state id).
inline void assign_state_ids(TransitionDataset& ds, const EnvInstance& env) {
    std::map<std::vector<double>, int> env_id;
    for (int s = 0; s < env.n_states; ++s) env_id.emplace(env.features[s], s);
    auto lookup = [&](Observation& obs) {
        auto it = env_id.find(obs.features);
        if (it == env_id.end()) throw UsageError("assign_state_ids: dataset features unknown to env");
        obs.state_id = it->second;
    };
    for (LabeledTransition& tr : ds.transitions) {
        lookup(tr.s_t);
        lookup(tr.s_next);
    }
}

inline TransitionDataset dataset_prefix(const TransitionDataset& ds, int n) {
    if (n < 1 || n > static_cast<int>(ds.transitions.size())) {
        throw UsageError("dataset_prefix: size out of range");
    }
    TransitionDataset out = ds;
    out.transitions.resize(static_cast<std::size_t>(n));
    return out;
}

// 2-D PCA projection of encoder means over the dataset's distinct states,
// plus the mixture component means projected into the same plane.
// CSV columns: kind,id,label,component,x,y (kind is "state" or "centroid").
// Saved datasets carry features, not state ids, so points are the distinct
// feature vectors seen in the dataset; labels come from the env's ground truth.
inline void export_latents(const VibModel& model, const TransitionDataset& ds,
                           const EnvInstance& env, const std::string& out_path) {
    if (model.config.d < 2) throw UsageError("export_latents: need at least 2 latent dimensions");
    std::map<std::vector<double>, int> env_id;
    for (int s = 0; s < env.n_states; ++s) env_id.emplace(env.features[s], s);
    std::map<int, const std::vector<double>*> states;
    auto add = [&](const std::vector<double>& feat) {
        auto it = env_id.find(feat);
        if (it == env_id.end()) throw UsageError("export_latents: dataset features unknown to env");
        states.emplace(it->second, &it->first);
    };
    for (const auto& tr : ds.transitions) {
        add(tr.s_t.features);
        add(tr.s_next.features);
    }
    int d = model.config.d;
    std::vector<int> ids;
    std::vector<std::vector<double>> zs;
    for (const auto& [id, feat] : states) {
        ids.push_back(id);
        zs.push_back(model.encode(*feat).mean);
    }
    auto n = static_cast<double>(zs.size());
    std::vector<double> center(d, 0.0);
    for (const auto& z : zs) {
        for (int i = 0; i < d; ++i) center[i] += z[i] / n;
    }
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const auto& z : zs) {
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) cov[i][j] += (z[i] - center[i]) * (z[j] - center[j]) / n;
        }
    }
    EigenPairs eigs = top_eigenpairs(cov, 2);
    auto project = [&](const std::vector<double>& z, int axis) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += (z[i] - center[i]) * eigs.vectors[axis][i];
        return s;
    };
    MixtureParams mix = model.mixture();
    std::string csv = "kind,id,label,component,x,y\n";
    for (std::size_t i = 0; i < zs.size(); ++i) {
        int label = env.labels[ids[i]];
        int comp = assign_abstract_state(model, mix, *states.at(ids[i]));
        csv += "state," + std::to_string(ids[i]) + "," + std::to_string(label) + "," +
               std::to_string(comp) + "," + csv_double(project(zs[i], 0)) + "," +
               csv_double(project(zs[i], 1)) + "\n";
    }
    for (int k = 0; k < mix.K; ++k) {
        std::vector<double> mu(d);
        for (int i = 0; i < d; ++i) mu[i] = mix.means.at(k, i);
        csv += "centroid," + std::to_string(k) + ",-1," + std::to_string(k) + "," +
               csv_double(project(mu, 0)) + "," + csv_double(project(mu, 1)) + "\n";
    }
    write_text_file(out_path, csv);
}

namespace detail {

// Seed-stream tags for the pipeline stages; per-task offsets sit on top.
constexpr std::uint64_t kSeedDqn = 10;
constexpr std::uint64_t kSeedCollect = 20;
constexpr std::uint64_t kSeedVib = 30;
constexpr std::uint64_t kSeedBaseline = 40;
constexpr std::uint64_t kSeedEval = 50;
constexpr std::uint64_t kSeedSweepVib = 60;
constexpr std::uint64_t kSeedSweepBaseline = 70;

struct StageClock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

inline double tail_mean(const std::vector<double>& xs, std::size_t tail) {
    if (xs.empty()) return 0.0;
    std::size_t n = std::min(tail, xs.size());
    double s = 0.0;
    for (std::size_t i = xs.size() - n; i < xs.size(); ++i) s += xs[i];
    return s / static_cast<double>(n);
}

}  // namespace detail

// Runs the configured stages in order, writing every artifact into
// config.output_dir. A stage with a nonempty `load` path is skipped and its
// artifact read instead. On a stage failure the report records the stage and
// cause, keeps all completed results, and is still written to disk.
inline RunReport run_pipeline(const ExperimentConfig& config) {
    config.validate();
    RunReport report;
    report.seed = config.seed;
    report.config_echo = experiment_config_to_json(config);
    std::filesystem::create_directories(config.output_dir);
    auto out_path = [&](const std::string& name) {
        return (std::filesystem::path(config.output_dir) / name).string();
    };

    EnvInstance env = make_env(config.env);
    std::vector<std::string> dqn_tasks =
        config.dqn.tasks.empty() ? std::vector<std::string>{env.default_task} : config.dqn.tasks;
    std::vector<std::string> eval_tasks =
        config.eval.tasks.empty() ? std::vector<std::string>{env.default_task} : config.eval.tasks;

    std::vector<QNetwork> qnets;
    TransitionDataset dataset;
    VibTrainResult vib;
    bool have_vib = false;
    std::string stage = "init";
    detail::StageClock total_clock;
    try {
        // --- train-dqn -----------------------------------------------------
        stage = "dqn";
        {
            detail::StageClock clock;
            nlohmann::json per_task = nlohmann::json::array();
            for (std::size_t i = 0; i < dqn_tasks.size(); ++i) {
                const std::string& task = dqn_tasks[i];
                if (!env.goal_states.count(task)) {
                    throw ConfigError("dqn: env has no task named '" + task + "'");
                }
                if (!config.dqn.load.empty()) {
                    // load is a directory holding dqn_<task>.json artifacts
                    std::string path =
                        (std::filesystem::path(config.dqn.load) / ("dqn_" + task + ".json")).string();
                    if (!std::filesystem::exists(path)) {
                        throw ConfigError("dqn: load requested but artifact missing: " + path);
                    }
                    qnets.push_back(load_qnetwork(path));
                    per_task.push_back({{"task", task}, {"loaded_from", path}});
                    continue;
                }
                Rng rng(derive_seed(config.seed, detail::kSeedDqn + i));
                DqnResult res = train_dqn(env, task, config.dqn.train, rng);
                std::string path = out_path("dqn_" + task + ".json");
                save_qnetwork(path, res.net);
                qnets.push_back(std::move(res.net));
                per_task.push_back({{"task", task},
                                    {"gradient_steps", res.td_losses.size()},
                                    {"td_loss_last100", detail::tail_mean(res.td_losses, 100)},
                                    {"artifact", path}});
                report.artifacts["dqn_" + task] = path;
            }
            report.stages["dqn"] = {{"tasks", per_task}};
            report.timings["dqn"] = clock.seconds();
        }

        // --- collect -------------------------------------------------------
        stage = "dataset";
        {
            detail::StageClock clock;
            int needed = config.dataset.n_transitions;
            for (int s : config.dataset.sweep_sizes) needed = std::max(needed, s);
            if (!config.dataset.load.empty()) {
                if (!std::filesystem::exists(config.dataset.load)) {
                    throw ConfigError("dataset: load requested but artifact missing: " + config.dataset.load);
                }
                dataset = load_dataset_jsonl(config.dataset.load);
                assign_state_ids(dataset, env);
                if (static_cast<int>(dataset.size()) < needed) {
                    throw ConfigError("dataset: loaded dataset smaller than requested size");
                }
                report.stages["dataset"] = {{"loaded_from", config.dataset.load}, {"n", dataset.size()}};
            } else {
                Rng rng(derive_seed(config.seed, detail::kSeedCollect));
                dataset = collect_dataset(env, dqn_tasks, qnets, needed,
                                          config.dataset.behavior_epsilon, config.dataset.max_steps,
                                          rng, config.seed);
                std::string path = out_path("dataset.jsonl");
                save_dataset_jsonl(dataset, path);
                report.artifacts["dataset"] = path;
                report.stages["dataset"] = {{"n", dataset.size()},
                                            {"n_tasks", dataset.n_tasks},
                                            {"artifact", path}};
            }
            report.timings["dataset"] = clock.seconds();
        }
        TransitionDataset main_data = dataset_prefix(dataset, config.dataset.n_transitions);

        // --- train-vib + extract ------------------------------------------
        if (config.vib.enabled) {
            stage = "vib";
            detail::StageClock clock;
            if (!config.vib.load.empty()) {
                if (!std::filesystem::exists(config.vib.load)) {
                    throw ConfigError("vib: load requested but artifact missing: " + config.vib.load);
                }
                vib.model = load_vib_model(config.vib.load);
                report.stages["vib"] = {{"loaded_from", config.vib.load}};
            } else {
                Rng rng(derive_seed(config.seed, detail::kSeedVib));
                vib = train_vib(main_data, config.vib.config, rng);
                std::string path = out_path("vib_model.json");
                save_vib_model(path, vib.model);
                std::string trace = "step,loss,pred,rate,beta\n";
                for (const VibTraceEntry& e : vib.trace) {
                    trace += std::to_string(e.step) + "," + csv_double(e.loss) + "," +
                             csv_double(e.pred) + "," + csv_double(e.rate) + "," +
                             csv_double(e.beta) + "\n";
                }
                std::string trace_path = out_path("vib_trace.csv");
                write_text_file(trace_path, trace);
                report.artifacts["vib_model"] = path;
                report.artifacts["vib_trace"] = trace_path;
                report.stages["vib"] = {{"final_loss", vib.trace.back().loss},
                                        {"restart_losses", vib.restart_losses},
                                        {"chosen_restart", vib.chosen_restart},
                                        {"artifact", path}};
            }
            have_vib = true;
            AbstractionMap am = build_abstraction_map(vib.model, env);
            report.stages["vib"]["purity"] = purity(am.assign, env.labels);
            report.stages["vib"]["abstraction_size"] = effective_num_states(am.assign);
            report.timings["vib"] = clock.seconds();
        }

        // --- baseline ------------------------------------------------------
        if (config.baseline.enabled) {
            stage = "baseline";
            detail::StageClock clock;
            Partition part;
            nlohmann::json info;
            if (!config.baseline.load.empty()) {
                if (!std::filesystem::exists(config.baseline.load)) {
                    throw ConfigError("baseline: load requested but artifact missing: " + config.baseline.load);
                }
                part = load_partition(config.baseline.load);
                info["loaded_from"] = config.baseline.load;
            } else {
                ForwardModel fm;
                if (config.baseline.oracle) {
                    fm = oracle_forward_model(env.tabular(env.default_task));
                    info["model"] = "oracle";
                } else {
                    Rng rng(derive_seed(config.seed, detail::kSeedBaseline));
                    fm = train_forward_model(main_data, env.n_states, config.baseline.train, rng);
                    std::span<const LabeledTransition> all(main_data.transitions);
                    info["model"] = "learned";
                    info["next_state_accuracy"] = next_state_accuracy(fm, all);
                }
                part = greedy_approx_bisimulation(fm, env.n_states, env.n_actions,
                                                  config.baseline.epsilon);
                std::string path = out_path("partition.json");
                save_partition(path, part);
                info["artifact"] = path;
                report.artifacts["partition"] = path;
            }
            PartitionMetrics pm = partition_metrics(part, env.labels);
            info["n_blocks"] = pm.size;
            info["purity"] = pm.purity;
            info["epsilon"] = config.baseline.epsilon;
            report.stages["baseline"] = info;
            report.timings["baseline"] = clock.seconds();
        }

        // --- plan + evaluate ----------------------------------------------
        if (have_vib) {
            stage = "plan";
            detail::StageClock clock;
            RewardProjection mode = config.eval.reward_mode == "mean" ? RewardProjection::kMean
                                                                      : RewardProjection::kAny;
            nlohmann::json rows = nlohmann::json::array();
            for (std::size_t ti = 0; ti < eval_tasks.size(); ++ti) {
                const std::string& task = eval_tasks[ti];
                if (!env.goal_states.count(task)) {
                    throw ConfigError("eval: env has no task named '" + task + "'");
                }
                AbstractMDP amdp = build_abstract_mdp(vib.model, main_data,
                                                      make_goal_predicate(env, task), env.gamma, mode);
                QTable q = value_iteration(amdp);
                std::string mdp_path = out_path("abstract_" + task + ".json");
                save_abstract_mdp(mdp_path, amdp);
                report.artifacts["abstract_" + task] = mdp_path;
                std::vector<std::vector<double>> policy = softmax_policy(q, config.eval.temperature);

                std::uint64_t eval_seed = derive_seed(config.seed, detail::kSeedEval + ti);
                auto paired_rng = [&]() { return Rng(eval_seed); };

                Rng r1 = paired_rng();
                PolicyEvalResult abstract_res = evaluate_policy(env, vib.model, policy, task,
                                                                config.eval.budget,
                                                                config.eval.episodes, r1);
                rows.push_back({{"task", task},
                                {"policy", "abstract"},
                                {"success_rate", abstract_res.success_rate},
                                {"return_mean", abstract_res.episode_return.mean},
                                {"return_std", abstract_res.episode_return.stddev},
                                {"bellman_residual", bellman_residual(amdp, q)}});

                Rng r2 = paired_rng();
                auto random_act = [&](int, Rng& er) {
                    return std::uniform_int_distribution<int>(0, env.n_actions - 1)(er);
                };
                PolicyEvalResult random_res = evaluate_ground_policy(env, task, random_act,
                                                                     config.eval.budget,
                                                                     config.eval.episodes, r2);
                rows.push_back({{"task", task},
                                {"policy", "random"},
                                {"success_rate", random_res.success_rate},
                                {"return_mean", random_res.episode_return.mean},
                                {"return_std", random_res.episode_return.stddev}});

                // paired comparison policies that need a trained DQN for the task
                auto it = std::find(dqn_tasks.begin(), dqn_tasks.end(), task);
                if (it != dqn_tasks.end() && !qnets.empty()) {
                    int task_idx = static_cast<int>(it - dqn_tasks.begin());
                    Rng r3 = paired_rng();
                    const QNetwork& net = qnets[task_idx];
                    auto dqn_act = [&](int s, Rng&) {
                        std::vector<double> qv = net.q_values(env.features[s]);
                        return argmax(std::span<const double>(qv.data(), qv.size()));
                    };
                    PolicyEvalResult dqn_res = evaluate_ground_policy(env, task, dqn_act,
                                                                      config.eval.budget,
                                                                      config.eval.episodes, r3);
                    rows.push_back({{"task", task},
                                    {"policy", "dqn_greedy"},
                                    {"success_rate", dqn_res.success_rate},
                                    {"return_mean", dqn_res.episode_return.mean},
                                    {"return_std", dqn_res.episode_return.stddev}});

                    QTable mq = mean_q(vib.model, main_data, task_idx);
                    std::vector<std::vector<double>> greedy(vib.model.config.K,
                                                            std::vector<double>(env.n_actions, 0.0));
                    for (int k = 0; k < vib.model.config.K; ++k) {
                        const std::vector<double>& row = mq.values[k];
                        greedy[k][argmax(std::span<const double>(row.data(), row.size()))] = 1.0;
                    }
                    Rng r4 = paired_rng();
                    PolicyEvalResult mq_res = evaluate_policy(env, vib.model, greedy, task,
                                                              config.eval.budget,
                                                              config.eval.episodes, r4);
                    rows.push_back({{"task", task},
                                    {"policy", "meanq_greedy"},
                                    {"success_rate", mq_res.success_rate},
                                    {"return_mean", mq_res.episode_return.mean},
                                    {"return_std", mq_res.episode_return.stddev}});
                }
            }
            report.stages["eval"] = {{"rows", rows},
                                     {"budget", config.eval.budget},
                                     {"episodes", config.eval.episodes}};
            report.timings["eval"] = clock.seconds();

            if (vib.model.config.d >= 2) {
                stage = "latents";
                std::string path = out_path("latents.csv");
                export_latents(vib.model, main_data, env, path);
                report.artifacts["latents"] = path;
            }
        }

        // --- dataset-size sweep -------------------------------------------
        if (!config.dataset.sweep_sizes.empty()) {
            stage = "sweep";
            detail::StageClock clock;
            std::string csv = "method,size,purity,abstraction_size\n";
            for (std::size_t si = 0; si < config.dataset.sweep_sizes.size(); ++si) {
                int size = config.dataset.sweep_sizes[si];
                TransitionDataset sub = dataset_prefix(dataset, size);
                if (config.vib.enabled) {
                    Rng rng(derive_seed(config.seed, detail::kSeedSweepVib + si));
                    VibTrainResult r = train_vib(sub, config.vib.config, rng);
                    AbstractionMap am = build_abstraction_map(r.model, env);
                    csv += "vib," + std::to_string(size) + "," +
                           csv_double(purity(am.assign, env.labels)) + "," +
                           std::to_string(effective_num_states(am.assign)) + "\n";
                }
                if (config.baseline.enabled && !config.baseline.oracle) {
                    Rng rng(derive_seed(config.seed, detail::kSeedSweepBaseline + si));
                    ForwardModel fm = train_forward_model(sub, env.n_states, config.baseline.train, rng);
                    Partition part = greedy_approx_bisimulation(fm, env.n_states, env.n_actions,
                                                                config.baseline.epsilon);
                    PartitionMetrics pm = partition_metrics(part, env.labels);
                    csv += "baseline," + std::to_string(size) + "," + csv_double(pm.purity) + "," +
                           std::to_string(pm.size) + "\n";
                }
            }
            std::string path = out_path("sweep.csv");
            write_text_file(path, csv);
            report.artifacts["sweep"] = path;
            report.stages["sweep"] = {{"sizes", config.dataset.sweep_sizes}, {"artifact", path}};
            report.timings["sweep"] = clock.seconds();
        }
    } catch (const std::exception& e) {
        report.failed = true;
        report.failure_stage = stage;
        report.failure_message = e.what();
    }

    report.timings["total"] = total_clock.seconds();
    nlohmann::json rj = run_report_to_json(report);
    require_finite_json(rj, "");
    write_text_file(out_path("report.json"), rj.dump(2) + "\n");
    write_text_file(out_path("timings.json"), report.timings.dump(2) + "\n");
    return report;
}

// --- cross-run aggregation --------------------------------------------------

namespace detail {

inline void flatten_numeric(const nlohmann::json& j, const std::string& prefix,
                            std::map<std::string, double>& out) {
    if (j.is_number()) {
        out[prefix] = j.get<double>();
    } else if (j.is_object()) {
        for (const auto& [k, v] : j.items()) {
            flatten_numeric(v, prefix.empty() ? k : prefix + "." + k, out);
        }
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            flatten_numeric(j[i], prefix + "." + std::to_string(i), out);
        }
    }
}

inline void diff_keys(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix,
                      std::vector<std::string>& out) {
    if (a.is_object() && b.is_object()) {
        std::set<std::string> keys;
        for (const auto& [k, v] : a.items()) keys.insert(k);
        for (const auto& [k, v] : b.items()) keys.insert(k);
        for (const std::string& k : keys) {
            std::string path = prefix.empty() ? k : prefix + "." + k;
            if (!a.contains(k) || !b.contains(k)) {
                out.push_back(path);
            } else {
                diff_keys(a.at(k), b.at(k), path, out);
            }
        }
    } else if (a != b) {
        out.push_back(prefix);
    }
}

}  // namespace detail

struct AggregateReport {
    nlohmann::json summary;
    std::string csv;
    std::string table;
};

// Aggregates report.json files from several seeded runs of one config:
// per-metric mean and standard deviation. Configs must agree on everything
// except seed and output_dir, else the differing keys are reported.
inline AggregateReport aggregate_runs(const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw UsageError("aggregate_runs: no run directories");
    std::vector<nlohmann::json> reports;
    for (const std::string& dir : run_dirs) {
        std::string path = (std::filesystem::path(dir) / "report.json").string();
        if (!std::filesystem::exists(path)) {
            throw ConfigError("aggregate_runs: missing report: " + path);
        }
        reports.push_back(nn::load_json_file(path));
    }
    auto stripped_config = [](const nlohmann::json& r) {
        nlohmann::json c = r.at("config");
        c.erase("seed");
        c.erase("output_dir");
        return c;
    };
    nlohmann::json reference = stripped_config(reports.front());
    for (std::size_t i = 1; i < reports.size(); ++i) {
        std::vector<std::string> diffs;
        detail::diff_keys(reference, stripped_config(reports[i]), "", diffs);
        if (!diffs.empty()) {
            std::string msg = "aggregate_runs: configs differ at:";
            for (const std::string& d : diffs) msg += " " + d;
            throw ConfigError(msg);
        }
    }

    std::vector<std::map<std::string, double>> flat(reports.size());
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        detail::flatten_numeric(reports[i].at("stages"), "", flat[i]);
        seeds.push_back(reports[i].at("seed").get<std::uint64_t>());
    }
    std::map<std::string, std::vector<double>> grouped;
    for (const auto& [key, value] : flat.front()) {
        bool everywhere = true;
        for (std::size_t i = 1; i < flat.size(); ++i) {
            if (!flat[i].count(key)) {
                everywhere = false;
                break;
            }
        }
        if (!everywhere) continue;
        for (std::size_t i = 0; i < flat.size(); ++i) grouped[key].push_back(flat[i].at(key));
    }

    AggregateReport out;
    out.summary = {{"n_runs", reports.size()}, {"seeds", seeds}};
    nlohmann::json metrics = nlohmann::json::object();
    out.csv = "metric,mean,std,n\n";
    std::size_t width = 6;
    for (const auto& [key, values] : grouped) width = std::max(width, key.size());
    out.table = std::string("metric") + std::string(width - 6, ' ') + "  mean +- std (n)\n";
    for (const auto& [key, values] : grouped) {
        MeanStd ms = mean_std(std::span<const double>(values.data(), values.size()));
        metrics[key] = {{"mean", ms.mean}, {"std", ms.stddev}, {"n", values.size()}};
        out.csv += key + "," + csv_double(ms.mean) + "," + csv_double(ms.stddev) + "," +
                   std::to_string(values.size()) + "\n";
        out.table += key + std::string(width - key.size(), ' ') + "  " + csv_double(ms.mean) +
                     " +- " + csv_double(ms.stddev) + " (" + std::to_string(values.size()) + ")\n";
    }
    out.summary["metrics"] = metrics;
    require_finite_json(out.summary, "");
    return out;
}

// Writes <out_base>.json, <out_base>.csv, <out_base>.txt.
inline void write_aggregate(const AggregateReport& agg, const std::string& out_base) {
    write_text_file(out_base + ".json", agg.summary.dump(2) + "\n");
    write_text_file(out_base + ".csv", agg.csv);
    write_text_file(out_base + ".txt", agg.table);
}

}  // namespace vibsim