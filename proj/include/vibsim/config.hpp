#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibsim/baseline.hpp"
#include "vibsim/common.hpp"
#include "vibsim/dqn.hpp"
#include "vibsim/envs.hpp"
#include "vibsim/vib.hpp"

namespace vibsim {

struct EnvConfig {
    std::string id;  // "column_world" | "symbolic_shapes"
    int rows = 30;
    int cols = 3;
    int grid = 2;
    int n_objects = 2;
    int n_shape_types = 2;
    double gamma = 0.9;

    void validate() const {
        if (id != "column_world" && id != "symbolic_shapes") {
            throw ConfigError("env.id must be 'column_world' or 'symbolic_shapes', got '" + id + "'");
        }
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("env.gamma must be in [0, 1)");
        if (id == "column_world" && (rows < 1 || cols < 1)) {
            throw ConfigError("env.rows and env.cols must be positive");
        }
        if (id == "symbolic_shapes" && (grid < 1 || n_objects < 1 || n_shape_types < 1)) {
            throw ConfigError("env.grid, env.n_objects, env.n_shape_types must be positive");
        }
    }
};

inline EnvInstance make_env(const EnvConfig& c) {
    c.validate();
    if (c.id == "column_world") return column_world(c.rows, c.cols, c.gamma);
    return symbolic_shapes(c.grid, c.n_objects, c.n_shape_types, c.gamma).env;
}

struct DqnBlock {
    std::vector<std::string> tasks;  // empty -> env default task
    DqnTrainConfig train;
    std::string load;  // nonempty: skip training, load nets from this prefix
};

struct DatasetBlock {
    int n_transitions = 20000;
    double behavior_epsilon = 0.3;
    int max_steps = 50;
    std::vector<int> sweep_sizes;  // optional purity-vs-size sweep
    std::string load;              // nonempty: skip collection, read this file

    void validate() const {
        if (n_transitions < 1) throw ConfigError("dataset.n_transitions must be positive");
        if (!(behavior_epsilon >= 0.0 && behavior_epsilon <= 1.0)) {
            throw ConfigError("dataset.behavior_epsilon must be in [0, 1]");
        }
        if (max_steps < 1) throw ConfigError("dataset.max_steps must be positive");
        for (int s : sweep_sizes) {
            if (s < 1) throw ConfigError("dataset.sweep_sizes entries must be positive");
        }
    }
};

struct VibBlock {
    bool enabled = true;
    VibConfig config;
    std::string load;
};

struct BaselineBlock {
    bool enabled = false;
    double epsilon = 0.5;
    bool oracle = false;  // use exact env dynamics instead of a learned model
    ForwardModelConfig train;
    std::string load;

    void validate() const {
        if (!(epsilon >= 0.0)) throw ConfigError("baseline.epsilon must be nonnegative");
    }
};

struct EvalBlock {
    std::vector<std::string> tasks;  // empty -> env default task
    int budget = 50;
    int episodes = 100;
    double temperature = 0.1;
    std::string reward_mode = "any";  // "any" | "mean" goal-reward projection

    void validate() const {
        if (budget < 1 || episodes < 1) throw ConfigError("eval.budget and eval.episodes must be positive");
        if (!(temperature > 0.0)) throw ConfigError("eval.temperature must be positive");
        if (reward_mode != "any" && reward_mode != "mean") {
            throw ConfigError("eval.reward_mode must be 'any' or 'mean'");
        }
    }
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    bool seed_set = false;  // seeds are mandatory in config files
    std::string output_dir = "run";
    EnvConfig env;
    DqnBlock dqn;
    DatasetBlock dataset;
    VibBlock vib;
    BaselineBlock baseline;
    EvalBlock eval;

    void validate() const {
        if (!seed_set) throw ConfigError("config: 'seed' is required");
        if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
        env.validate();
        dqn.train.validate();
        dataset.validate();
        if (vib.enabled) vib.config.validate();
        baseline.validate();
        eval.validate();
        if (!vib.enabled && !baseline.enabled) {
            throw ConfigError("config: at least one of vib/baseline must be enabled");
        }
    }
};

inline nlohmann::json env_config_to_json(const EnvConfig& c) {
    nlohmann::json j{{"id", c.id}, {"gamma", c.gamma}};
    if (c.id == "column_world") {
        j["rows"] = c.rows;
        j["cols"] = c.cols;
    } else {
        j["grid"] = c.grid;
        j["n_objects"] = c.n_objects;
        j["n_shape_types"] = c.n_shape_types;
    }
    return j;
}

inline EnvConfig env_config_from_json(const nlohmann::json& j) {
    EnvConfig c;
    c.id = j.value("id", std::string());
    c.rows = j.value("rows", c.rows);
    c.cols = j.value("cols", c.cols);
    c.grid = j.value("grid", c.grid);
    c.n_objects = j.value("n_objects", c.n_objects);
    c.n_shape_types = j.value("n_shape_types", c.n_shape_types);
    c.gamma = j.value("gamma", c.gamma);
    return c;
}

inline nlohmann::json dqn_train_to_json(const DqnTrainConfig& c) {
    return nlohmann::json{
        {"episodes", c.episodes},       {"max_steps", c.max_steps},
        {"hidden", c.hidden},           {"replay_capacity", c.replay_capacity},
        {"batch_size", c.batch_size},   {"target_update", c.target_update},
        {"lr", c.lr},                   {"eps_start", c.eps_start},
        {"eps_end", c.eps_end},
    };
}

inline DqnTrainConfig dqn_train_from_json(const nlohmann::json& j) {
    DqnTrainConfig c;
    c.episodes = j.value("episodes", c.episodes);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.hidden = j.value("hidden", c.hidden);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.target_update = j.value("target_update", c.target_update);
    c.lr = j.value("lr", c.lr);
    c.eps_start = j.value("eps_start", c.eps_start);
    c.eps_end = j.value("eps_end", c.eps_end);
    return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json dqn = dqn_train_to_json(c.dqn.train);
    dqn["tasks"] = c.dqn.tasks;
    dqn["load"] = c.dqn.load;
    nlohmann::json vib = vib_config_to_json(c.vib.config);
    vib["enabled"] = c.vib.enabled;
    vib["load"] = c.vib.load;
    return nlohmann::json{
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"env", env_config_to_json(c.env)},
        {"dqn", dqn},
        {"dataset",
         {{"n_transitions", c.dataset.n_transitions},
          {"behavior_epsilon", c.dataset.behavior_epsilon},
          {"max_steps", c.dataset.max_steps},
          {"sweep_sizes", c.dataset.sweep_sizes},
          {"load", c.dataset.load}}},
        {"vib", vib},
        {"baseline",
         {{"enabled", c.baseline.enabled},
          {"epsilon", c.baseline.epsilon},
          {"oracle", c.baseline.oracle},
          {"hidden", c.baseline.train.hidden},
          {"steps", c.baseline.train.steps},
          {"batch_size", c.baseline.train.batch_size},
          {"lr", c.baseline.train.lr},
          {"load", c.baseline.load}}},
        {"eval",
         {{"tasks", c.eval.tasks},
          {"budget", c.eval.budget},
          {"episodes", c.eval.episodes},
          {"temperature", c.eval.temperature},
          {"reward_mode", c.eval.reward_mode}}},
    };
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("seed")) {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.seed_set = true;
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
    if (j.contains("dqn")) {
        const auto& d = j.at("dqn");
        c.dqn.train = dqn_train_from_json(d);
        c.dqn.tasks = d.value("tasks", c.dqn.tasks);
        c.dqn.load = d.value("load", c.dqn.load);
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        c.dataset.n_transitions = d.value("n_transitions", c.dataset.n_transitions);
        c.dataset.behavior_epsilon = d.value("behavior_epsilon", c.dataset.behavior_epsilon);
        c.dataset.max_steps = d.value("max_steps", c.dataset.max_steps);
        c.dataset.sweep_sizes = d.value("sweep_sizes", c.dataset.sweep_sizes);
        c.dataset.load = d.value("load", c.dataset.load);
    }
    if (j.contains("vib")) {
        const auto& v = j.at("vib");
        c.vib.config = vib_config_from_json(v);
        c.vib.enabled = v.value("enabled", c.vib.enabled);
        c.vib.load = v.value("load", c.vib.load);
    }
    if (j.contains("baseline")) {
        const auto& b = j.at("baseline");
        c.baseline.enabled = b.value("enabled", c.baseline.enabled);
        c.baseline.epsilon = b.value("epsilon", c.baseline.epsilon);
        c.baseline.oracle = b.value("oracle", c.baseline.oracle);
        c.baseline.train.hidden = b.value("hidden", c.baseline.train.hidden);
        c.baseline.train.steps = b.value("steps", c.baseline.train.steps);
        c.baseline.train.batch_size = b.value("batch_size", c.baseline.train.batch_size);
        c.baseline.train.lr = b.value("lr", c.baseline.train.lr);
        c.baseline.load = b.value("load", c.baseline.load);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        c.eval.tasks = e.value("tasks", c.eval.tasks);
        c.eval.budget = e.value("budget", c.eval.budget);
        c.eval.episodes = e.value("episodes", c.eval.episodes);
        c.eval.temperature = e.value("temperature", c.eval.temperature);
        c.eval.reward_mode = e.value("reward_mode", c.eval.reward_mode);
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    nlohmann::json j = nn::load_json_file(path);
    ExperimentConfig c = experiment_config_from_json(j);
    c.validate();
    return c;
}

}  // namespace vibsim