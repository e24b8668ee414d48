// Command-line front end: per-stage subcommands plus a full pipeline runner.
// Every stage reads inputs from the config's `load` paths or, when unset,
// from the run's output directory, so `run` and a sequence of per-stage
// invocations produce the same artifacts.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vibsim/pipeline.hpp"

namespace {

using namespace vibsim;

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

ExperimentConfig load_config(const CliOptions& opt) {
    if (opt.config_path.empty()) throw ConfigError("--config is required for this command");
    ExperimentConfig cfg = load_experiment_config(opt.config_path);
    if (opt.seed_given) cfg.seed = opt.seed;
    if (!opt.out_dir.empty()) cfg.output_dir = opt.out_dir;
    cfg.validate();
    return cfg;
}

std::string artifact(const ExperimentConfig& cfg, const std::string& name) {
    return (std::filesystem::path(cfg.output_dir) / name).string();
}

std::string require_file(const std::string& preferred, const std::string& fallback,
                         const std::string& what) {
    const std::string& path = preferred.empty() ? fallback : preferred;
    if (!std::filesystem::exists(path)) {
        throw ConfigError(what + " not found at " + path +
                          " (run the earlier stage or set the load path in the config)");
    }
    return path;
}

std::vector<std::string> dqn_task_list(const ExperimentConfig& cfg, const EnvInstance& env) {
    return cfg.dqn.tasks.empty() ? std::vector<std::string>{env.default_task} : cfg.dqn.tasks;
}

std::vector<QNetwork> load_dqns(const ExperimentConfig& cfg, const EnvInstance& env) {
    std::vector<QNetwork> nets;
    for (const std::string& task : dqn_task_list(cfg, env)) {
        std::string fallback = artifact(cfg, "dqn_" + task + ".json");
        std::string preferred;
        if (!cfg.dqn.load.empty()) {
            preferred = (std::filesystem::path(cfg.dqn.load) / ("dqn_" + task + ".json")).string();
        }
        nets.push_back(load_qnetwork(require_file(preferred, fallback, "DQN model for '" + task + "'")));
    }
    return nets;
}

TransitionDataset load_data(const ExperimentConfig& cfg, const EnvInstance& env) {
    TransitionDataset ds = load_dataset_jsonl(
        require_file(cfg.dataset.load, artifact(cfg, "dataset.jsonl"), "dataset"));
    assign_state_ids(ds, env);
    return ds;
}

VibModel load_vib(const ExperimentConfig& cfg) {
    return load_vib_model(require_file(cfg.vib.load, artifact(cfg, "vib_model.json"), "model"));
}

int cmd_train_dqn(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    std::filesystem::create_directories(cfg.output_dir);
    EnvInstance env = make_env(cfg.env);
    std::vector<std::string> tasks = dqn_task_list(cfg, env);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        Rng rng(derive_seed(cfg.seed, detail::kSeedDqn + i));
        DqnResult res = train_dqn(env, tasks[i], cfg.dqn.train, rng);
        std::string path = artifact(cfg, "dqn_" + tasks[i] + ".json");
        save_qnetwork(path, res.net);
        std::printf("trained DQN for '%s' -> %s (td loss %.6f)\n", tasks[i].c_str(), path.c_str(),
                    detail::tail_mean(res.td_losses, 100));
    }
    return 0;
}

int cmd_collect(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    std::filesystem::create_directories(cfg.output_dir);
    EnvInstance env = make_env(cfg.env);
    std::vector<QNetwork> nets = load_dqns(cfg, env);
    int needed = cfg.dataset.n_transitions;
    for (int s : cfg.dataset.sweep_sizes) needed = std::max(needed, s);
    Rng rng(derive_seed(cfg.seed, detail::kSeedCollect));
    TransitionDataset ds = collect_dataset(env, dqn_task_list(cfg, env), nets, needed,
                                           cfg.dataset.behavior_epsilon, cfg.dataset.max_steps,
                                           rng, cfg.seed);
    std::string path = artifact(cfg, "dataset.jsonl");
    save_dataset_jsonl(ds, path);
    std::printf("collected %zu transitions -> %s\n", ds.size(), path.c_str());
    return 0;
}

int cmd_train_vib(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    std::filesystem::create_directories(cfg.output_dir);
    EnvInstance env = make_env(cfg.env);
    TransitionDataset ds = dataset_prefix(load_data(cfg, env), cfg.dataset.n_transitions);
    Rng rng(derive_seed(cfg.seed, detail::kSeedVib));
    VibTrainResult res = train_vib(ds, cfg.vib.config, rng);
    std::string path = artifact(cfg, "vib_model.json");
    save_vib_model(path, res.model);
    std::string trace = "step,loss,pred,rate,beta\n";
    for (const VibTraceEntry& e : res.trace) {
        trace += std::to_string(e.step) + "," + csv_double(e.loss) + "," + csv_double(e.pred) +
                 "," + csv_double(e.rate) + "," + csv_double(e.beta) + "\n";
    }
    write_text_file(artifact(cfg, "vib_trace.csv"), trace);
    std::printf("trained model -> %s (final loss %.4f, kept restart %d of %d)\n", path.c_str(),
                res.trace.back().loss, res.chosen_restart + 1, cfg.vib.config.restarts);
    return 0;
}

int cmd_baseline(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    std::filesystem::create_directories(cfg.output_dir);
    EnvInstance env = make_env(cfg.env);
    ForwardModel fm;
    if (cfg.baseline.oracle) {
        fm = oracle_forward_model(env.tabular(env.default_task));
    } else {
        TransitionDataset ds = dataset_prefix(load_data(cfg, env), cfg.dataset.n_transitions);
        Rng rng(derive_seed(cfg.seed, detail::kSeedBaseline));
        fm = train_forward_model(ds, env.n_states, cfg.baseline.train, rng);
    }
    Partition part = greedy_approx_bisimulation(fm, env.n_states, env.n_actions, cfg.baseline.epsilon);
    std::string path = artifact(cfg, "partition.json");
    save_partition(path, part);
    PartitionMetrics pm = partition_metrics(part, env.labels);
    std::printf("baseline partition -> %s (%d blocks, purity %.3f, epsilon %.2f)\n", path.c_str(),
                pm.size, pm.purity, cfg.baseline.epsilon);
    return 0;
}

int cmd_extract(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    std::filesystem::create_directories(cfg.output_dir);
    EnvInstance env = make_env(cfg.env);
    VibModel model = load_vib(cfg);
    AbstractionMap am = build_abstraction_map(model, env);
    nlohmann::json j{{"assignments", am.assign},
                     {"purity", purity(am.assign, env.labels)},
                     {"abstraction_size", effective_num_states(am.assign)}};
    require_finite_json(j, "");
    std::string path = artifact(cfg, "extract.json");
    write_text_file(path, j.dump(2) + "\n");
    std::printf("abstraction -> %s (%d states, purity %.3f)\n", path.c_str(),
                j["abstraction_size"].get<int>(), j["purity"].get<double>());
    return 0;
}

int cmd_plan(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    std::filesystem::create_directories(cfg.output_dir);
    EnvInstance env = make_env(cfg.env);
    VibModel model = load_vib(cfg);
    TransitionDataset ds = dataset_prefix(load_data(cfg, env), cfg.dataset.n_transitions);
    RewardProjection mode =
        cfg.eval.reward_mode == "mean" ? RewardProjection::kMean : RewardProjection::kAny;
    std::vector<std::string> tasks =
        cfg.eval.tasks.empty() ? std::vector<std::string>{env.default_task} : cfg.eval.tasks;
    for (const std::string& task : tasks) {
        if (!env.goal_states.count(task)) throw ConfigError("plan: env has no task named '" + task + "'");
        AbstractMDP amdp =
            build_abstract_mdp(model, ds, make_goal_predicate(env, task), env.gamma, mode);
        QTable q = value_iteration(amdp);
        std::string path = artifact(cfg, "abstract_" + task + ".json");
        save_abstract_mdp(path, amdp);
        std::printf("planned '%s' -> %s (Bellman residual %.2e)\n", task.c_str(), path.c_str(),
                    bellman_residual(amdp, q));
    }
    return 0;
}

int cmd_evaluate(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    std::filesystem::create_directories(cfg.output_dir);
    EnvInstance env = make_env(cfg.env);
    VibModel model = load_vib(cfg);
    TransitionDataset ds = dataset_prefix(load_data(cfg, env), cfg.dataset.n_transitions);
    RewardProjection mode =
        cfg.eval.reward_mode == "mean" ? RewardProjection::kMean : RewardProjection::kAny;
    std::vector<std::string> tasks =
        cfg.eval.tasks.empty() ? std::vector<std::string>{env.default_task} : cfg.eval.tasks;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        const std::string& task = tasks[ti];
        if (!env.goal_states.count(task)) throw ConfigError("evaluate: env has no task named '" + task + "'");
        AbstractMDP amdp =
            build_abstract_mdp(model, ds, make_goal_predicate(env, task), env.gamma, mode);
        QTable q = value_iteration(amdp);
        std::vector<std::vector<double>> policy = softmax_policy(q, cfg.eval.temperature);
        std::uint64_t eval_seed = derive_seed(cfg.seed, detail::kSeedEval + ti);
        Rng r1(eval_seed);
        PolicyEvalResult res =
            evaluate_policy(env, model, policy, task, cfg.eval.budget, cfg.eval.episodes, r1);
        rows.push_back({{"task", task},
                        {"policy", "abstract"},
                        {"success_rate", res.success_rate},
                        {"return_mean", res.episode_return.mean},
                        {"return_std", res.episode_return.stddev}});
        Rng r2(eval_seed);
        auto random_act = [&](int, Rng& er) {
            return std::uniform_int_distribution<int>(0, env.n_actions - 1)(er);
        };
        PolicyEvalResult rnd =
            evaluate_ground_policy(env, task, random_act, cfg.eval.budget, cfg.eval.episodes, r2);
        rows.push_back({{"task", task},
                        {"policy", "random"},
                        {"success_rate", rnd.success_rate},
                        {"return_mean", rnd.episode_return.mean},
                        {"return_std", rnd.episode_return.stddev}});
        std::printf("%s: abstract success %.2f (return %.2f), random success %.2f (return %.2f)\n",
                    task.c_str(), res.success_rate, res.episode_return.mean, rnd.success_rate,
                    rnd.episode_return.mean);
    }
    nlohmann::json j{{"rows", rows}, {"budget", cfg.eval.budget}, {"episodes", cfg.eval.episodes}};
    require_finite_json(j, "");
    write_text_file(artifact(cfg, "evaluate.json"), j.dump(2) + "\n");
    return 0;
}

int cmd_export_latents(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    std::filesystem::create_directories(cfg.output_dir);
    EnvInstance env = make_env(cfg.env);
    VibModel model = load_vib(cfg);
    TransitionDataset ds = dataset_prefix(load_data(cfg, env), cfg.dataset.n_transitions);
    std::string path = artifact(cfg, "latents.csv");
    export_latents(model, ds, env, path);
    std::printf("latent projection -> %s\n", path.c_str());
    return 0;
}

int cmd_run(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    RunReport report = run_pipeline(cfg);
    std::printf("report -> %s\n", artifact(cfg, "report.json").c_str());
    if (report.failed) {
        std::fprintf(stderr, "stage '%s' failed: %s\n", report.failure_stage.c_str(),
                     report.failure_message.c_str());
        return 2;
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_base) {
    AggregateReport agg = aggregate_runs(run_dirs);
    write_aggregate(agg, out_base);
    std::printf("%s", agg.table.c_str());
    std::printf("aggregate -> %s.json / .csv / .txt\n", out_base.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete abstraction learning for MDPs: dataset generation, "
                 "information-bottleneck training, baselines, and planning"};
    app.require_subcommand(1);

    CliOptions opt;
    std::vector<std::string> run_dirs;
    std::string report_out = "aggregate";

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "experiment config file (JSON)");
        sub->add_option("--out", opt.out_dir, "output directory (overrides config)");
        sub->add_option("--seed", opt.seed, "seed (overrides config)")
            ->each([&](const std::string&) { opt.seed_given = true; });
    };

    CLI::App* c_dqn = app.add_subcommand("train-dqn", "train per-task Q-networks");
    CLI::App* c_collect = app.add_subcommand("collect", "roll out labeled transitions");
    CLI::App* c_vib = app.add_subcommand("train-vib", "fit the bottleneck model");
    CLI::App* c_base = app.add_subcommand("baseline", "greedy approximate-bisimulation partition");
    CLI::App* c_extract = app.add_subcommand("extract", "map ground states to abstract states");
    CLI::App* c_plan = app.add_subcommand("plan", "build abstract MDPs and solve them");
    CLI::App* c_eval = app.add_subcommand("evaluate", "roll out the abstract policy");
    CLI::App* c_latents = app.add_subcommand("export-latents", "2-D projection of the latent space");
    CLI::App* c_run = app.add_subcommand("run", "full pipeline");
    for (CLI::App* sub : {c_dqn, c_collect, c_vib, c_base, c_extract, c_plan, c_eval, c_latents, c_run}) {
        add_common(sub);
    }
    CLI::App* c_report = app.add_subcommand("report", "aggregate metrics across seeded runs");
    c_report->add_option("dirs", run_dirs, "run directories")->required();
    c_report->add_option("--out", report_out, "output base path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_dqn->parsed()) return cmd_train_dqn(opt);
        if (c_collect->parsed()) return cmd_collect(opt);
        if (c_vib->parsed()) return cmd_train_vib(opt);
        if (c_base->parsed()) return cmd_baseline(opt);
        if (c_extract->parsed()) return cmd_extract(opt);
        if (c_plan->parsed()) return cmd_plan(opt);
        if (c_eval->parsed()) return cmd_evaluate(opt);
        if (c_latents->parsed()) return cmd_export_latents(opt);
        if (c_run->parsed()) return cmd_run(opt);
        if (c_report->parsed()) return cmd_report(run_dirs, report_out);
    } catch (const vibsim::ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 1;
    } catch (const vibsim::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "stage failure: %s\n", e.what());
        return 2;
    }
    return 0;
}