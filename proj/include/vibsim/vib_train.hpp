#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vibsim/adam.hpp"
#include "vibsim/common.hpp"
#include "vibsim/dataset.hpp"
#include "vibsim/graph.hpp"
#include "vibsim/vib.hpp"

namespace vibsim {

// Transition minibatch packed into dense inputs.
struct VibBatch {
    nn::Tensor x_t, x_next, y;
    std::vector<int> actions;
    int size = 0;
};

inline VibBatch make_vib_batch(const TransitionDataset& ds, const std::vector<int>& indices) {
    if (indices.empty()) throw UsageError("make_vib_batch: empty index list");
    int b = static_cast<int>(indices.size());
    int f = ds.feature_dim();
    int out = static_cast<int>(ds.transitions.front().y.size());
    VibBatch batch;
    batch.size = b;
    batch.x_t = nn::Tensor(b, f);
    batch.x_next = nn::Tensor(b, f);
    batch.y = nn::Tensor(b, out);
    batch.actions.resize(b);
    for (int i = 0; i < b; ++i) {
        const LabeledTransition& tr = ds.transitions.at(indices[i]);
        std::copy(tr.s_t.features.begin(), tr.s_t.features.end(),
                  batch.x_t.data.begin() + static_cast<std::size_t>(i) * f);
        std::copy(tr.s_next.features.begin(), tr.s_next.features.end(),
                  batch.x_next.data.begin() + static_cast<std::size_t>(i) * f);
        std::copy(tr.y.begin(), tr.y.end(), batch.y.data.begin() + static_cast<std::size_t>(i) * out);
        batch.actions[i] = tr.a;
    }
    return batch;
}

inline VibBatch make_vib_batch(std::span<const LabeledTransition> transitions) {
    if (transitions.empty()) throw UsageError("make_vib_batch: empty batch");
    TransitionDataset tmp;
    tmp.transitions.assign(transitions.begin(), transitions.end());
    std::vector<int> idx(transitions.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return make_vib_batch(tmp, idx);
}

// Differentiable loss graph with frozen noise draws: forward() can be rerun
// after parameter edits, which is what the finite-difference checks do.
struct VibLossGraph {
    nn::Graph g;
    nn::Graph::Var loss = -1;        // scalar
    nn::Graph::Var per_sample = -1;  // B x 1
    nn::Graph::Var pred = -1;        // scalar, prediction term
    nn::Graph::Var rate = -1;        // scalar, beta-scaled rate term
};

inline VibLossGraph build_vib_loss(VibModel& model, const VibBatch& batch,
                                   const nn::Tensor& noise_t, const nn::Tensor& noise_next,
                                   double beta_eff) {
    int b = batch.size;
    int d = model.config.d;
    if (noise_t.rows != b || noise_t.cols != d || !noise_t.same_shape(noise_next)) {
        throw UsageError("build_vib_loss: noise shape mismatch");
    }
    if (batch.y.cols != model.out_dim()) {
        throw UsageError("build_vib_loss: label width does not match decoder output");
    }
    double log_rho = -std::log(static_cast<double>(model.config.K));

    VibLossGraph out;
    nn::Graph& g = out.g;
    auto xt = g.input(batch.x_t);
    auto xn = g.input(batch.x_next);
    auto y = g.input(batch.y);
    auto eps_t = g.input(noise_t);
    auto eps_n = g.input(noise_next);

    auto head_t = model.encoder.forward(g, xt);
    auto head_n = model.encoder.forward(g, xn);
    auto z_t = g.add(head_t.mean, g.mul(g.sqrt_(head_t.variance), eps_t));
    auto z_n = g.add(head_n.mean, g.mul(g.sqrt_(head_n.variance), eps_n));

    auto yhat = g.affine(z_t, g.param(model.dec_w), g.param(model.dec_b));
    auto pred_rows = g.scale(g.row_sum(g.square(g.sub(y, yhat))),
                             1.0 / (2.0 * model.config.sigma_y * model.config.sigma_y));

    // log q(z|s) at the drawn sample: -1/2 sum_i (log 2pi + log var_i + eps_i^2);
    // the mean cancels because z - mean = sqrt(var) * eps.
    auto lq_t = g.scale(g.row_sum(g.add_const(g.add(g.log_(head_t.variance), g.square(eps_t)),
                                              kLogTwoPi)), -0.5);
    auto lq_n = g.scale(g.row_sum(g.add_const(g.add(g.log_(head_n.variance), g.square(eps_n)),
                                              kLogTwoPi)), -0.5);

    auto means = g.param(model.prior_means);
    auto vars = g.add_const(g.softplus_(g.param(model.prior_var_raw)), 1e-6);
    nn::Graph::Var log_prior;
    if (model.has_hmm()) {
        auto logits = g.param(model.trans_logits);
        auto log_t = g.sub_colvec(logits, g.log_sum_exp_rows(logits));
        auto m1 = g.add_const(g.gauss_log_density(z_t, means, vars), log_rho);
        auto u = g.log_matmul_actions(m1, log_t, batch.actions);
        log_prior = g.log_sum_exp_rows(g.add(u, g.gauss_log_density(z_n, means, vars)));
    } else {
        auto comp = g.add_const(g.gauss_log_density(z_t, means, vars), log_rho);
        log_prior = g.log_sum_exp_rows(comp);
    }

    auto rate_rows = g.scale(g.sub(g.add(lq_t, lq_n), log_prior), beta_eff);
    out.per_sample = g.add(pred_rows, rate_rows);
    out.loss = g.scale(g.sum_all(out.per_sample), 1.0 / b);
    out.pred = g.scale(g.sum_all(pred_rows), 1.0 / b);
    out.rate = g.scale(g.sum_all(rate_rows), 1.0 / b);
    return out;
}

inline void draw_noise(nn::Tensor& noise, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : noise.data) v = normal(rng);
}

// Deterministic-encoder evaluation: z is the encoder mean, the component
// assignment is hard, and the prior term uses discrete component/transition
// probabilities, so a bisimulation-respecting model scores exactly
// beta * log K (prediction error zero, every transition probability one).
inline double idealized_vib_loss(const VibModel& model, std::span<const LabeledTransition> batch) {
    if (batch.empty()) throw UsageError("vib_loss: empty batch");
    MixtureParams mix = model.mixture();
    HmmPrior hmm;
    if (model.has_hmm()) hmm = model.hmm_prior();
    double log_rho = -std::log(static_cast<double>(model.config.K));
    double inv_two_sigma2 = 1.0 / (2.0 * model.config.sigma_y * model.config.sigma_y);

    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const LabeledTransition& tr = batch[i];
        std::vector<double> z_t = model.encode(tr.s_t.features).mean;
        std::vector<double> z_n = model.encode(tr.s_next.features).mean;
        std::vector<double> yhat = model.decode(z_t);
        double err = 0.0;
        for (std::size_t j = 0; j < yhat.size(); ++j) {
            double dj = tr.y[j] - yhat[j];
            err += dj * dj;
        }
        auto post_t = posterior_over_components(z_t, mix);
        int c_t = argmax(std::span<const double>(post_t.data(), post_t.size()));
        double log_prior = log_rho;
        if (model.has_hmm()) {
            auto post_n = posterior_over_components(z_n, mix);
            int c_n = argmax(std::span<const double>(post_n.data(), post_n.size()));
            log_prior += hmm.log_transition.at(tr.a * model.config.K + c_t, c_n);
        }
        double sample = err * inv_two_sigma2 - model.config.beta * log_prior;
        if (!std::isfinite(sample)) {
            throw TrainingError("vib_loss: non-finite loss at batch index " + std::to_string(i));
        }
        total += sample;
    }
    return total / static_cast<double>(batch.size());
}

inline double vib_loss(VibModel& model, std::span<const LabeledTransition> batch, Rng& rng) {
    if (batch.empty()) throw UsageError("vib_loss: empty batch");
    if (model.config.idealized_mode) return idealized_vib_loss(model, batch);
    VibBatch vb = make_vib_batch(batch);
    nn::Tensor noise_t(vb.size, model.config.d);
    nn::Tensor noise_n(vb.size, model.config.d);
    draw_noise(noise_t, rng);
    draw_noise(noise_n, rng);
    VibLossGraph lg = build_vib_loss(model, vb, noise_t, noise_n, model.config.beta);
    lg.g.forward();
    const nn::Tensor& rows = lg.g.value(lg.per_sample);
    for (int i = 0; i < rows.size(); ++i) {
        if (!std::isfinite(rows.data[i])) {
            throw TrainingError("vib_loss: non-finite loss at batch index " + std::to_string(i));
        }
    }
    return lg.g.scalar_value(lg.loss);
}

struct VibTraceEntry {
    int step = 0;
    double loss = 0.0;
    double pred = 0.0;  // scaled squared-error term
    double rate = 0.0;  // beta-scaled rate term
    double beta = 0.0;  // effective beta after warm-up
};

struct VibTrainResult {
    VibModel model;
    std::vector<VibTraceEntry> trace;      // trace of the kept restart
    std::vector<double> restart_losses;    // evaluation loss per restart
    int chosen_restart = 0;
};

// Data-dependent decoder start: bias at the label mean, weight rows along the
// leading principal directions of the labels. The encoder's targets then sit
// at unit scale around the origin from step one, which is the same region the
// mixture components are born in; without this the encoder drags its clusters
// far from the prior chasing the labels' common offset, and single components
// swallow whole groups of clusters before the mixture catches up.
inline void init_decoder_from_labels(VibModel& model, const TransitionDataset& dataset) {
    int out = model.out_dim();
    auto n = static_cast<double>(dataset.transitions.size());
    std::vector<double> mean(out, 0.0);
    for (const auto& tr : dataset.transitions) {
        for (int j = 0; j < out; ++j) mean[j] += tr.y[j] / n;
    }
    for (int j = 0; j < out; ++j) model.dec_b.value.data[j] = mean[j];

    std::vector<std::vector<double>> cov(out, std::vector<double>(out, 0.0));
    for (const auto& tr : dataset.transitions) {
        for (int i = 0; i < out; ++i) {
            for (int j = 0; j < out; ++j) cov[i][j] += (tr.y[i] - mean[i]) * (tr.y[j] - mean[j]) / n;
        }
    }
    EigenPairs eigs = top_eigenpairs(cov, model.config.d);
    model.dec_w.value.fill(0.0);
    int have = static_cast<int>(eigs.vectors.size());
    for (int i = 0; i < model.config.d && i < have; ++i) {
        for (int j = 0; j < out; ++j) model.dec_w.value.at(i, j) = eigs.vectors[i][j];
    }
}

// One gradient-descent pass over the objective from a fresh initialization.
// Beta ramps linearly over the first fifth of the schedule, which keeps the
// decoder from collapsing onto the prior before it can predict anything.
// Prior parameters get their own optimizer with a faster learning rate so the
// mixture can track the encoder's clusters while they are still moving.
inline VibTrainResult train_vib_single(const TransitionDataset& dataset, const VibConfig& config,
                                       Rng& rng) {
    VibTrainResult result;
    result.model = make_vib_model(config, dataset.feature_dim(), dataset.n_actions,
                                  dataset.n_tasks, rng);
    VibModel& model = result.model;
    init_decoder_from_labels(model, dataset);

    std::vector<nn::Parameter*> main_params, prior_params;
    for (nn::Parameter* p : model.params()) {
        (p->id.rfind("prior.", 0) == 0 ? prior_params : main_params).push_back(p);
    }
    nn::AdamOptimizer opt(main_params, config.lr);
    nn::AdamOptimizer prior_opt(prior_params, config.lr * config.prior_lr_scale);

    int warmup_steps = std::max(1, config.steps / 5);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(dataset.transitions.size()) - 1);
    std::vector<int> indices(config.batch_size);
    nn::Tensor noise_t(config.batch_size, config.d);
    nn::Tensor noise_n(config.batch_size, config.d);

    for (int step = 0; step < config.steps; ++step) {
        double beta_eff = config.beta *
                          std::min(1.0, static_cast<double>(step + 1) / warmup_steps);
        for (int& idx : indices) idx = pick(rng);
        VibBatch batch = make_vib_batch(dataset, indices);
        draw_noise(noise_t, rng);
        draw_noise(noise_n, rng);
        VibLossGraph lg = build_vib_loss(model, batch, noise_t, noise_n, beta_eff);
        lg.g.forward();
        double loss = lg.g.scalar_value(lg.loss);
        if (!std::isfinite(loss)) {
            throw TrainingError("train_vib: non-finite loss at step " + std::to_string(step) +
                                " (last finite loss: " +
                                (result.trace.empty() ? std::string("none")
                                                      : std::to_string(result.trace.back().loss)) +
                                ")");
        }
        opt.zero_grad();
        prior_opt.zero_grad();
        lg.g.backward(lg.loss);
        opt.step();
        prior_opt.step();
        result.trace.push_back({step, loss, lg.g.scalar_value(lg.pred),
                                lg.g.scalar_value(lg.rate), beta_eff});
    }
    return result;
}

// Held-out-style comparison loss: a fixed thinned subset of the dataset and a
// fixed noise stream, identical across restarts so only the model differs.
inline double restart_eval_loss(VibModel& model, const TransitionDataset& dataset,
                                std::uint64_t eval_seed) {
    int n = static_cast<int>(dataset.transitions.size());
    int stride = std::max(1, n / 2000);
    std::vector<LabeledTransition> subset;
    for (int i = 0; i < n; i += stride) subset.push_back(dataset.transitions[i]);
    Rng eval_rng(derive_seed(eval_seed, 0xe7a1));
    return vib_loss(model, std::span<const LabeledTransition>(subset), eval_rng);
}

// Stochastic gradient training of encoder, decoder, and prior parameters.
// The mixture fit is multimodal (components can lock onto the wrong cluster
// split early), so several independent restarts are run and the model with
// the lowest comparison loss is kept.
inline VibTrainResult train_vib(const TransitionDataset& dataset, const VibConfig& config, Rng& rng) {
    config.validate();
    if (dataset.transitions.empty()) throw UsageError("train_vib: empty dataset");
    if (config.idealized_mode) {
        throw ConfigError("train_vib: idealized_mode is evaluation-only (hard assignments have no gradient)");
    }
    dataset.validate();
    int out_dim = static_cast<int>(dataset.transitions.front().y.size());
    if (out_dim != dataset.n_actions * dataset.n_tasks) {
        throw ConfigError("train_vib: label width does not match n_actions * n_tasks");
    }

    std::uint64_t base = rng();
    VibTrainResult best;
    std::vector<double> losses;
    int chosen = 0;
    for (int r = 0; r < config.restarts; ++r) {
        Rng run_rng(derive_seed(base, static_cast<std::uint64_t>(r)));
        VibTrainResult candidate = train_vib_single(dataset, config, run_rng);
        double eval = restart_eval_loss(candidate.model, dataset, base);
        losses.push_back(eval);
        if (r == 0 || eval < losses[chosen]) {
            chosen = r;
            best = std::move(candidate);
        }
    }
    best.restart_losses = std::move(losses);
    best.chosen_restart = chosen;
    return best;
}

}  // namespace vibsim
