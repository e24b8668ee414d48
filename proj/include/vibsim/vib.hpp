#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibsim/common.hpp"
#include "vibsim/graph.hpp"
#include "vibsim/net.hpp"
#include "vibsim/params_io.hpp"
#include "vibsim/tensor.hpp"

namespace vibsim {

struct VibConfig {
    double beta = 0.1;
    int K = 6;                  // mixture components (abstract-state budget)
    int d = 4;                  // latent dimension
    std::string prior_kind = "hmm";  // "gmm" | "hmm"
    double sigma_y = 1.0;       // decoder observation scale
    int steps = 8000;
    int batch_size = 64;
    double lr = 1e-3;
    double prior_lr_scale = 20.0;  // prior params track the encoder's moving clusters
    int restarts = 3;              // mixture fits are multimodal; keep the best by loss
    std::uint64_t seed = 0;
    bool idealized_mode = false;  // deterministic encoder, hard component assignment
    std::vector<int> encoder_hidden = {64, 64};

    void validate() const {
        if (!(beta > 0.0)) throw ConfigError("VibConfig: beta must be positive");
        if (K < 2) throw ConfigError("VibConfig: K must be at least 2");
        if (d < 1) throw ConfigError("VibConfig: d must be at least 1");
        if (prior_kind != "gmm" && prior_kind != "hmm") {
            throw ConfigError("VibConfig: prior_kind must be 'gmm' or 'hmm'");
        }
        if (!(sigma_y > 0.0)) throw ConfigError("VibConfig: sigma_y must be positive");
        if (steps < 1 || batch_size < 1) throw ConfigError("VibConfig: steps and batch_size must be positive");
        if (!(lr > 0.0)) throw ConfigError("VibConfig: lr must be positive");
        if (!(prior_lr_scale > 0.0)) throw ConfigError("VibConfig: prior_lr_scale must be positive");
        if (restarts < 1) throw ConfigError("VibConfig: restarts must be at least 1");
        for (int h : encoder_hidden) {
            if (h < 1) throw ConfigError("VibConfig: encoder hidden sizes must be positive");
        }
    }
};

struct GaussianPosterior {
    std::vector<double> mean;
    std::vector<double> variance;  // diagonal, strictly positive
};

// Materialized mixture: uniform fixed weights, positive diagonal variances.
struct MixtureParams {
    int K = 0;
    int d = 0;
    nn::Tensor means;              // K x d
    nn::Tensor variances;          // K x d
    std::vector<double> log_weights;

    void validate() const {
        if (means.rows != K || means.cols != d || !means.same_shape(variances)) {
            throw UsageError("MixtureParams: shape mismatch");
        }
        for (double v : variances.data) {
            if (!(v > 0.0)) throw UsageError("MixtureParams: variances must be positive");
        }
        double s = 0.0;
        for (double lw : log_weights) s += std::exp(lw);
        if (std::abs(s - 1.0) > 1e-9) throw UsageError("MixtureParams: weights must sum to 1");
    }
};

struct HmmPrior {
    MixtureParams mixture;
    int n_actions = 0;
    nn::Tensor log_transition;  // (n_actions*K) x K, rows log-sum to 0
};

// log N(z | mu_k, diag(var_k)) for one component row of a mixture.
inline double component_log_density(const std::vector<double>& z, const MixtureParams& mix, int k) {
    double s = 0.0;
    for (int i = 0; i < mix.d; ++i) {
        s += gaussian_log_pdf(z[i], mix.means.at(k, i), mix.variances.at(k, i));
    }
    return s;
}

// log p_GMM(z) = log sum_k rho_k N(z | mu_k, Sigma_k).
inline double gmm_log_density(const std::vector<double>& z, const MixtureParams& mix) {
    if (static_cast<int>(z.size()) != mix.d) throw UsageError("gmm_log_density: dimension mismatch");
    std::vector<double> terms(mix.K);
    for (int k = 0; k < mix.K; ++k) terms[k] = mix.log_weights[k] + component_log_density(z, mix, k);
    return log_sum_exp(terms);
}

// log p_HMM(z_t, z_next | a) = log sum_{k,l} rho_k N(z_t|k) T^a_{k,l} N(z_next|l),
// computed as a nested log-sum-exp for stability.
inline double hmm_log_density(const std::vector<double>& z_t, const std::vector<double>& z_next,
                              int action, const HmmPrior& prior) {
    const MixtureParams& mix = prior.mixture;
    if (static_cast<int>(z_t.size()) != mix.d || static_cast<int>(z_next.size()) != mix.d) {
        throw UsageError("hmm_log_density: dimension mismatch");
    }
    if (action < 0 || action >= prior.n_actions) throw UsageError("hmm_log_density: action out of range");
    std::vector<double> next_terms(mix.K);
    for (int l = 0; l < mix.K; ++l) next_terms[l] = component_log_density(z_next, mix, l);
    std::vector<double> outer(mix.K);
    std::vector<double> inner(mix.K);
    for (int k = 0; k < mix.K; ++k) {
        int row = action * mix.K + k;
        for (int l = 0; l < mix.K; ++l) inner[l] = prior.log_transition.at(row, l) + next_terms[l];
        outer[k] = mix.log_weights[k] + component_log_density(z_t, mix, k) + log_sum_exp(inner);
    }
    return log_sum_exp(outer);
}

// p(component k | z) — softmax over log rho_k + log N(z | mu_k, Sigma_k).
inline std::vector<double> posterior_over_components(const std::vector<double>& z,
                                                     const MixtureParams& mix) {
    if (static_cast<int>(z.size()) != mix.d) {
        throw UsageError("posterior_over_components: dimension mismatch");
    }
    std::vector<double> logits(mix.K);
    for (int k = 0; k < mix.K; ++k) logits[k] = mix.log_weights[k] + component_log_density(z, mix, k);
    softmax_inplace(logits);
    return logits;
}

// Encoder trunk of tanh layers with affine mean and raw-variance heads.
// With no trunk layers both heads read the features directly, so a tabular
// encoder over one-hot features is exactly representable.
struct VibEncoder {
    std::vector<nn::Parameter> trunk_w, trunk_b;
    nn::Parameter mean_w, mean_b;
    nn::Parameter var_w, var_b;

    static VibEncoder make(int feature_dim, const std::vector<int>& hidden, int d, Rng& rng) {
        VibEncoder e;
        int in = feature_dim;
        for (std::size_t li = 0; li < hidden.size(); ++li) {
            std::string tag = "encoder.l" + std::to_string(li);
            e.trunk_w.emplace_back(tag + ".w", nn::glorot_uniform(in, hidden[li], rng));
            e.trunk_b.emplace_back(tag + ".b", nn::Tensor(1, hidden[li]));
            in = hidden[li];
        }
        e.mean_w = nn::Parameter("encoder.mean.w", nn::glorot_uniform(in, d, rng));
        e.mean_b = nn::Parameter("encoder.mean.b", nn::Tensor(1, d));
        e.var_w = nn::Parameter("encoder.var.w", nn::glorot_uniform(in, d, rng));
        e.var_b = nn::Parameter("encoder.var.b", nn::Tensor(1, d));
        return e;
    }

    int in_dim() const {
        return trunk_w.empty() ? mean_w.value.rows : trunk_w.front().value.rows;
    }

    // Graph path: returns (mean, variance) node pair.
    struct Heads {
        nn::Graph::Var mean;
        nn::Graph::Var variance;
    };
    Heads forward(nn::Graph& g, nn::Graph::Var x) {
        nn::Graph::Var h = x;
        for (std::size_t li = 0; li < trunk_w.size(); ++li) {
            h = g.tanh_(g.affine(h, g.param(trunk_w[li]), g.param(trunk_b[li])));
        }
        Heads out;
        out.mean = g.affine(h, g.param(mean_w), g.param(mean_b));
        out.variance = g.add_const(g.softplus_(g.affine(h, g.param(var_w), g.param(var_b))), 1e-6);
        return out;
    }

    // Tapeless inference on a batch of rows.
    void apply(const nn::Tensor& x, nn::Tensor& mean, nn::Tensor& variance) const {
        nn::Tensor h = x;
        auto affine = [](const nn::Tensor& in, const nn::Parameter& w, const nn::Parameter& b) {
            nn::Tensor y(in.rows, w.value.cols);
            for (int i = 0; i < in.rows; ++i) {
                for (int j = 0; j < y.cols; ++j) y.at(i, j) = b.value.data[j];
                for (int k = 0; k < in.cols; ++k) {
                    double v = in.at(i, k);
                    if (v == 0.0) continue;
                    for (int j = 0; j < y.cols; ++j) y.at(i, j) += v * w.value.at(k, j);
                }
            }
            return y;
        };
        for (std::size_t li = 0; li < trunk_w.size(); ++li) {
            h = affine(h, trunk_w[li], trunk_b[li]);
            for (double& v : h.data) v = std::tanh(v);
        }
        mean = affine(h, mean_w, mean_b);
        variance = affine(h, var_w, var_b);
        for (double& v : variance.data) v = softplus(v) + 1e-6;
    }

    std::vector<nn::Parameter*> params() {
        std::vector<nn::Parameter*> ps;
        for (std::size_t li = 0; li < trunk_w.size(); ++li) {
            ps.push_back(&trunk_w[li]);
            ps.push_back(&trunk_b[li]);
        }
        ps.push_back(&mean_w);
        ps.push_back(&mean_b);
        ps.push_back(&var_w);
        ps.push_back(&var_b);
        return ps;
    }
};

// Encoder + affine decoder + mixture prior (optionally with per-action
// transition logits). Variances are stored as raw values under a
// softplus(·)+1e-6 map so the optimizer can move them freely.
struct VibModel {
    VibConfig config;
    int feature_dim = 0;
    int n_actions = 0;
    int n_tasks = 1;
    VibEncoder encoder;
    nn::Parameter dec_w, dec_b;          // d -> n_actions*n_tasks
    nn::Parameter prior_means;           // K x d
    nn::Parameter prior_var_raw;         // K x d
    nn::Parameter trans_logits;          // (n_actions*K) x K  (hmm only)

    int out_dim() const { return n_actions * n_tasks; }
    bool has_hmm() const { return config.prior_kind == "hmm"; }

    GaussianPosterior encode(const std::vector<double>& features) const {
        if (static_cast<int>(features.size()) != feature_dim) {
            throw UsageError("encode: feature dimension mismatch");
        }
        nn::Tensor mean, var;
        encoder.apply(nn::Tensor(1, feature_dim, features), mean, var);
        return GaussianPosterior{mean.data, var.data};
    }

    std::vector<double> reparam_sample(const GaussianPosterior& post, Rng& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> z(post.mean.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = post.mean[i] + std::sqrt(post.variance[i]) * normal(rng);
        }
        return z;
    }

    std::vector<double> decode(const std::vector<double>& z) const {
        std::vector<double> y(out_dim());
        for (int j = 0; j < out_dim(); ++j) {
            double s = dec_b.value.data[j];
            for (int i = 0; i < config.d; ++i) s += z[i] * dec_w.value.at(i, j);
            y[j] = s;
        }
        return y;
    }

    MixtureParams mixture() const {
        MixtureParams mix;
        mix.K = config.K;
        mix.d = config.d;
        mix.means = prior_means.value;
        mix.variances = prior_var_raw.value;
        for (double& v : mix.variances.data) v = softplus(v) + 1e-6;
        mix.log_weights.assign(config.K, -std::log(static_cast<double>(config.K)));
        return mix;
    }

    HmmPrior hmm_prior() const {
        if (!has_hmm()) throw UsageError("hmm_prior: model uses a GMM prior");
        HmmPrior prior;
        prior.mixture = mixture();
        prior.n_actions = n_actions;
        prior.log_transition = trans_logits.value;
        for (int r = 0; r < prior.log_transition.rows; ++r) {
            std::span<double> row(&prior.log_transition.data[static_cast<std::size_t>(r) * config.K],
                                  static_cast<std::size_t>(config.K));
            double lse = log_sum_exp(row);
            for (double& v : row) v -= lse;
        }
        return prior;
    }

    std::vector<nn::Parameter*> params() {
        std::vector<nn::Parameter*> ps = encoder.params();
        ps.push_back(&dec_w);
        ps.push_back(&dec_b);
        ps.push_back(&prior_means);
        ps.push_back(&prior_var_raw);
        if (has_hmm()) ps.push_back(&trans_logits);
        return ps;
    }
};

inline VibModel make_vib_model(const VibConfig& cfg, int feature_dim, int n_actions, int n_tasks,
                               Rng& rng) {
    cfg.validate();
    if (feature_dim < 1 || n_actions < 1 || n_tasks < 1) {
        throw ConfigError("make_vib_model: bad dimensions");
    }
    VibModel m;
    m.config = cfg;
    m.feature_dim = feature_dim;
    m.n_actions = n_actions;
    m.n_tasks = n_tasks;
    m.encoder = VibEncoder::make(feature_dim, cfg.encoder_hidden, cfg.d, rng);
    m.dec_w = nn::Parameter("decoder.w", nn::glorot_uniform(cfg.d, m.out_dim(), rng));
    m.dec_b = nn::Parameter("decoder.b", nn::Tensor(1, m.out_dim()));
    std::normal_distribution<double> normal(0.0, 1.0);
    nn::Tensor means(cfg.K, cfg.d);
    for (double& v : means.data) v = normal(rng);
    m.prior_means = nn::Parameter("prior.means", std::move(means));
    double raw_unit = softplus_inverse(1.0 - 1e-6);  // variances start at 1
    m.prior_var_raw = nn::Parameter("prior.var_raw", nn::Tensor::full(cfg.K, cfg.d, raw_unit));
    if (cfg.prior_kind == "hmm") {
        m.trans_logits = nn::Parameter("prior.trans_logits", nn::Tensor(n_actions * cfg.K, cfg.K));
    }
    return m;
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json vib_config_to_json(const VibConfig& c) {
    return nlohmann::json{
        {"beta", c.beta},         {"K", c.K},
        {"d", c.d},               {"prior_kind", c.prior_kind},
        {"sigma_y", c.sigma_y},   {"steps", c.steps},
        {"batch_size", c.batch_size}, {"lr", c.lr},
        {"prior_lr_scale", c.prior_lr_scale}, {"restarts", c.restarts},
        {"seed", c.seed},         {"idealized_mode", c.idealized_mode},
        {"encoder_hidden", c.encoder_hidden},
    };
}

inline VibConfig vib_config_from_json(const nlohmann::json& j) {
    VibConfig c;
    c.beta = j.value("beta", c.beta);
    c.K = j.value("K", c.K);
    c.d = j.value("d", c.d);
    c.prior_kind = j.value("prior_kind", c.prior_kind);
    c.sigma_y = j.value("sigma_y", c.sigma_y);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.prior_lr_scale = j.value("prior_lr_scale", c.prior_lr_scale);
    c.restarts = j.value("restarts", c.restarts);
    c.seed = j.value("seed", c.seed);
    c.idealized_mode = j.value("idealized_mode", c.idealized_mode);
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.validate();
    return c;
}

inline nlohmann::json vib_model_to_json(const VibModel& m) {
    std::vector<const nn::Parameter*> net_params;
    for (const auto& p : m.encoder.trunk_w) net_params.push_back(&p);
    for (const auto& p : m.encoder.trunk_b) net_params.push_back(&p);
    net_params.push_back(&m.encoder.mean_w);
    net_params.push_back(&m.encoder.mean_b);
    net_params.push_back(&m.encoder.var_w);
    net_params.push_back(&m.encoder.var_b);
    net_params.push_back(&m.dec_w);
    net_params.push_back(&m.dec_b);

    MixtureParams mix = m.mixture();
    nlohmann::json prior{{"K", m.config.K}, {"d", m.config.d}};
    std::vector<std::vector<double>> means(m.config.K), variances(m.config.K);
    for (int k = 0; k < m.config.K; ++k) {
        for (int i = 0; i < m.config.d; ++i) {
            means[k].push_back(mix.means.at(k, i));
            variances[k].push_back(mix.variances.at(k, i));
        }
    }
    prior["means"] = means;
    prior["variances"] = variances;
    if (m.has_hmm()) {
        std::vector<std::vector<double>> logits(m.trans_logits.value.rows);
        for (int r = 0; r < m.trans_logits.value.rows; ++r) {
            for (int c = 0; c < m.trans_logits.value.cols; ++c) {
                logits[r].push_back(m.trans_logits.value.at(r, c));
            }
        }
        prior["transition_logits"] = logits;
    }

    return nlohmann::json{
        {"config", vib_config_to_json(m.config)},
        {"feature_dim", m.feature_dim},
        {"n_actions", m.n_actions},
        {"n_tasks", m.n_tasks},
        {"net", nn::params_to_json(net_params)},
        {"prior", prior},
    };
}

inline VibModel vib_model_from_json(const nlohmann::json& j) {
    VibConfig cfg = vib_config_from_json(j.at("config"));
    Rng scratch(0);
    VibModel m = make_vib_model(cfg, j.at("feature_dim").get<int>(), j.at("n_actions").get<int>(),
                                j.at("n_tasks").get<int>(), scratch);
    std::vector<nn::Parameter*> net_params;
    for (auto& p : m.encoder.trunk_w) net_params.push_back(&p);
    for (auto& p : m.encoder.trunk_b) net_params.push_back(&p);
    net_params.push_back(&m.encoder.mean_w);
    net_params.push_back(&m.encoder.mean_b);
    net_params.push_back(&m.encoder.var_w);
    net_params.push_back(&m.encoder.var_b);
    net_params.push_back(&m.dec_w);
    net_params.push_back(&m.dec_b);
    nn::params_from_json(j.at("net"), net_params);

    const auto& prior = j.at("prior");
    if (prior.at("K").get<int>() != cfg.K || prior.at("d").get<int>() != cfg.d) {
        throw ConfigError("vib_model_from_json: prior block does not match config");
    }
    auto means = prior.at("means").get<std::vector<std::vector<double>>>();
    auto variances = prior.at("variances").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(means.size()) != cfg.K || static_cast<int>(variances.size()) != cfg.K) {
        throw ConfigError("vib_model_from_json: prior tables have wrong component count");
    }
    for (int k = 0; k < cfg.K; ++k) {
        if (static_cast<int>(means[k].size()) != cfg.d || static_cast<int>(variances[k].size()) != cfg.d) {
            throw ConfigError("vib_model_from_json: prior tables have wrong dimension");
        }
        for (int i = 0; i < cfg.d; ++i) {
            m.prior_means.value.at(k, i) = means[k][i];
            double v = variances[k][i];
            if (!(v > 1e-6)) throw ConfigError("vib_model_from_json: variance below the softplus floor");
            m.prior_var_raw.value.at(k, i) = softplus_inverse(v - 1e-6);
        }
    }
    if (m.has_hmm()) {
        auto logits = prior.at("transition_logits").get<std::vector<std::vector<double>>>();
        if (static_cast<int>(logits.size()) != m.trans_logits.value.rows) {
            throw ConfigError("vib_model_from_json: transition logits have wrong row count");
        }
        for (int r = 0; r < m.trans_logits.value.rows; ++r) {
            if (static_cast<int>(logits[r].size()) != cfg.K) {
                throw ConfigError("vib_model_from_json: transition logits have wrong column count");
            }
            for (int c = 0; c < cfg.K; ++c) m.trans_logits.value.at(r, c) = logits[r][c];
        }
    }
    return m;
}

inline void save_vib_model(const std::string& path, const VibModel& m) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << vib_model_to_json(m).dump(2) << "\n";
}

inline VibModel load_vib_model(const std::string& path) {
    return vib_model_from_json(nn::load_json_file(path));
}

}  // namespace vibsim
