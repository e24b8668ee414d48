#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <vector>

#include "vibsim/vib.hpp"
#include "vibsim/vib_train.hpp"
#include "test_helpers.hpp"

using namespace vibsim;

namespace {

MixtureParams standard_mixture(int K, int d) {
    MixtureParams mix;
    mix.K = K;
    mix.d = d;
    mix.means = nn::Tensor(K, d);
    mix.variances = nn::Tensor::full(K, d, 1.0);
    mix.log_weights.assign(K, -std::log(static_cast<double>(K)));
    return mix;
}

MixtureParams random_mixture(int K, int d, Rng& rng) {
    MixtureParams mix = standard_mixture(K, d);
    std::normal_distribution<double> normal(0.0, 2.0);
    std::uniform_real_distribution<double> spread(0.2, 3.0);
    for (double& m : mix.means.data) m = normal(rng);
    for (double& v : mix.variances.data) v = spread(rng);
    return mix;
}

// Two well-separated feature clusters whose labels are cluster-constant.
TransitionDataset toy_cluster_dataset(int n, Rng& rng) {
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
        tr.r = 0.0;
        tr.s_next.state_id = c_next;
        tr.s_next.features = {c_next ? 4.0 + jitter(rng) : -4.0 + jitter(rng), jitter(rng)};
        tr.y = c ? std::vector<double>{1.0, 0.5} : std::vector<double>{-1.0, -0.5};
        ds.transitions.push_back(tr);
    }
    return ds;
}

VibBatch batch_from(const TransitionDataset& ds, int n) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    return make_vib_batch(ds, idx);
}

}  // namespace

TEST_CASE("component density matches the diagonal Gaussian formula") {
    Rng rng(31);
    MixtureParams mix = random_mixture(4, 3, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> z(3);
        for (double& v : z) v = normal(rng);
        int k = trial % 4;
        double expect = 0.0;
        for (int i = 0; i < 3; ++i) {
            double var = mix.variances.at(k, i);
            double diff = z[i] - mix.means.at(k, i);
            expect += -0.5 * (std::log(2.0 * M_PI * var) + diff * diff / var);
        }
        REQUIRE(component_log_density(z, mix, k) == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("single-component mixture density reduces to one Gaussian") {
    MixtureParams mix = standard_mixture(1, 2);
    std::vector<double> z{0.0, 0.0};
    // log N(0 | 0, I_2) = -log(2 pi)
    REQUIRE(gmm_log_density(z, mix) == Catch::Approx(-std::log(2.0 * M_PI)).margin(1e-12));
}

TEST_CASE("transition-coupled density with one component is a product of Gaussians") {
    HmmPrior prior;
    prior.mixture = standard_mixture(1, 1);
    prior.n_actions = 2;
    prior.log_transition = nn::Tensor(2, 1);  // log 1 = 0 for the single target
    double expect = 2.0 * (-0.5 * std::log(2.0 * M_PI));
    REQUIRE(hmm_log_density({0.0}, {0.0}, 0, prior) == Catch::Approx(expect).margin(1e-12));
    REQUIRE(hmm_log_density({0.0}, {0.0}, 1, prior) == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("component posteriors are valid distributions") {
    Rng rng(97);
    MixtureParams mix = random_mixture(5, 3, rng);
    std::normal_distribution<double> normal(0.0, 3.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> z(3);
        for (double& v : z) v = normal(rng);
        std::vector<double> post = posterior_over_components(z, mix);
        REQUIRE(post.size() == 5);
        double sum = 0.0;
        for (double p : post) {
            REQUIRE(p >= 0.0);
            sum += p;
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("posterior concentrates on the nearest well-separated component") {
    MixtureParams mix = standard_mixture(3, 2);
    mix.means.at(1, 0) = 100.0;
    mix.means.at(2, 1) = 100.0;
    std::vector<double> post = posterior_over_components({0.1, -0.2}, mix);
    REQUIRE(post[0] >= 0.999);
    post = posterior_over_components({99.8, 0.3}, mix);
    REQUIRE(post[1] >= 0.999);
}

TEST_CASE("identical components yield a uniform posterior") {
    MixtureParams mix = standard_mixture(4, 2);
    for (double& m : mix.means.data) m = 1.5;
    std::vector<double> post = posterior_over_components({-2.0, 3.0}, mix);
    for (double p : post) REQUIRE(p == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("mixture density is invariant to component relabeling") {
    Rng rng(5);
    MixtureParams mix = random_mixture(4, 2, rng);
    MixtureParams shuffled = mix;
    std::vector<int> perm{2, 0, 3, 1};
    for (int k = 0; k < 4; ++k) {
        for (int i = 0; i < 2; ++i) {
            shuffled.means.at(k, i) = mix.means.at(perm[k], i);
            shuffled.variances.at(k, i) = mix.variances.at(perm[k], i);
        }
    }
    std::normal_distribution<double> normal(0.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> z{normal(rng), normal(rng)};
        REQUIRE(gmm_log_density(z, mix) ==
                Catch::Approx(gmm_log_density(z, shuffled)).margin(1e-12));
    }
}

TEST_CASE("encoder variances stay strictly positive") {
    VibConfig cfg;
    cfg.K = 2;
    cfg.d = 3;
    cfg.encoder_hidden = {8};
    Rng rng(11);
    VibModel model = make_vib_model(cfg, 4, 2, 1, rng);

    // Zeroed parameters pin the raw variance head at zero, so the transform
    // floor is directly observable.
    for (nn::Parameter* p : model.encoder.params()) p->value.fill(0.0);
    GaussianPosterior post = model.encode({0.3, -0.7, 1.1, 0.0});
    for (double v : post.variance) {
        REQUIRE(v == Catch::Approx(softplus(0.0) + 1e-6).margin(1e-12));
    }

    Rng rng2(12);
    VibModel fresh = make_vib_model(cfg, 4, 2, 1, rng2);
    std::normal_distribution<double> normal(0.0, 5.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x{normal(rng2), normal(rng2), normal(rng2), normal(rng2)};
        for (double v : fresh.encode(x).variance) REQUIRE(v > 0.0);
    }
}

TEST_CASE("equal features encode identically") {
    VibConfig cfg;
    cfg.K = 3;
    cfg.d = 2;
    Rng rng(21);
    VibModel model = make_vib_model(cfg, 5, 2, 1, rng);
    std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5};
    GaussianPosterior a = model.encode(x);
    GaussianPosterior b = model.encode(x);
    REQUIRE(a.mean == b.mean);
    REQUIRE(a.variance == b.variance);

    nn::Tensor batch(2, 5);
    for (int j = 0; j < 5; ++j) batch.at(0, j) = batch.at(1, j) = x[j];
    nn::Tensor mean, var;
    model.encoder.apply(batch, mean, var);
    for (int j = 0; j < 2; ++j) {
        REQUIRE(mean.at(0, j) == mean.at(1, j));
        REQUIRE(var.at(0, j) == var.at(1, j));
    }
}

TEST_CASE("reparameterized samples are seed-deterministic") {
    VibConfig cfg;
    cfg.K = 2;
    cfg.d = 4;
    Rng rng(33);
    VibModel model = make_vib_model(cfg, 3, 2, 1, rng);
    GaussianPosterior post = model.encode({1.0, -1.0, 0.5});
    Rng a(777), b(777), c(778);
    std::vector<double> za = model.reparam_sample(post, a);
    std::vector<double> zb = model.reparam_sample(post, b);
    std::vector<double> zc = model.reparam_sample(post, c);
    REQUIRE(za == zb);
    REQUIRE(za != zc);
}

TEST_CASE("zero-rate loss vanishes for a perfect constant decoder") {
    Rng rng(41);
    TransitionDataset ds = toy_cluster_dataset(16, rng);
    for (LabeledTransition& tr : ds.transitions) tr.y = {0.75, -0.25};

    VibConfig cfg;
    cfg.K = 2;
    cfg.d = 2;
    Rng mrng(42);
    VibModel model = make_vib_model(cfg, 2, 2, 1, mrng);
    model.dec_w.value.fill(0.0);
    model.dec_b.value.data = {0.75, -0.25};

    VibBatch batch = batch_from(ds, 16);
    nn::Tensor noise_t(16, 2), noise_n(16, 2);
    draw_noise(noise_t, rng);
    draw_noise(noise_n, rng);
    VibLossGraph lg = build_vib_loss(model, batch, noise_t, noise_n, 0.0);
    lg.g.forward();
    REQUIRE(lg.g.scalar_value(lg.pred) == 0.0);
    REQUIRE(lg.g.scalar_value(lg.loss) == 0.0);
}

TEST_CASE("rate term scales linearly in beta and leaves prediction alone") {
    Rng rng(51);
    TransitionDataset ds = toy_cluster_dataset(32, rng);
    for (const std::string& kind : {std::string("gmm"), std::string("hmm")}) {
        VibConfig cfg;
        cfg.K = 3;
        cfg.d = 2;
        cfg.prior_kind = kind;
        Rng mrng(52);
        VibModel model = make_vib_model(cfg, 2, 2, 1, mrng);
        VibBatch batch = batch_from(ds, 32);
        nn::Tensor noise_t(32, 2), noise_n(32, 2);
        draw_noise(noise_t, rng);
        draw_noise(noise_n, rng);

        VibLossGraph one = build_vib_loss(model, batch, noise_t, noise_n, 0.1);
        VibLossGraph two = build_vib_loss(model, batch, noise_t, noise_n, 0.2);
        one.g.forward();
        two.g.forward();
        REQUIRE(one.g.scalar_value(one.pred) ==
                Catch::Approx(two.g.scalar_value(two.pred)).margin(1e-12));
        REQUIRE(2.0 * one.g.scalar_value(one.rate) ==
                Catch::Approx(two.g.scalar_value(two.rate)).margin(1e-9));
        REQUIRE(one.g.scalar_value(one.loss) ==
                Catch::Approx(one.g.scalar_value(one.pred) +
                              one.g.scalar_value(one.rate)).margin(1e-9));
    }
}

TEST_CASE("mixture and transition-coupled priors share the prediction term") {
    Rng rng(61);
    TransitionDataset ds = toy_cluster_dataset(24, rng);
    VibConfig gmm_cfg;
    gmm_cfg.K = 3;
    gmm_cfg.d = 2;
    gmm_cfg.prior_kind = "gmm";
    VibConfig hmm_cfg = gmm_cfg;
    hmm_cfg.prior_kind = "hmm";

    // Identical seeds give identical encoder/decoder/mixture draws; the
    // transition table is zero-initialized and consumes no randomness.
    Rng a(99), b(99);
    VibModel gmm_model = make_vib_model(gmm_cfg, 2, 2, 1, a);
    VibModel hmm_model = make_vib_model(hmm_cfg, 2, 2, 1, b);
    REQUIRE(gmm_model.encoder.mean_w.value.data == hmm_model.encoder.mean_w.value.data);

    VibBatch batch = batch_from(ds, 24);
    nn::Tensor noise_t(24, 2), noise_n(24, 2);
    draw_noise(noise_t, rng);
    draw_noise(noise_n, rng);
    VibLossGraph lg_g = build_vib_loss(gmm_model, batch, noise_t, noise_n, 0.1);
    VibLossGraph lg_h = build_vib_loss(hmm_model, batch, noise_t, noise_n, 0.1);
    lg_g.g.forward();
    lg_h.g.forward();
    REQUIRE(lg_g.g.scalar_value(lg_g.pred) ==
            Catch::Approx(lg_h.g.scalar_value(lg_h.pred)).margin(1e-12));
}

namespace {

// Three one-hot states placed exactly on three mixture components, with a
// decoder that reproduces each label and deterministic component transitions.
struct IdealSetup {
    VibModel model;
    TransitionDataset ds;
};

IdealSetup make_ideal_setup() {
    VibConfig cfg;
    cfg.K = 3;
    cfg.d = 2;
    cfg.prior_kind = "hmm";
    cfg.beta = 0.1;
    cfg.encoder_hidden = {};
    Rng rng(71);
    IdealSetup setup{make_vib_model(cfg, 3, 2, 1, rng), {}};
    VibModel& m = setup.model;

    std::vector<std::vector<double>> mu{{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}};
    for (int s = 0; s < 3; ++s) {
        for (int i = 0; i < 2; ++i) {
            m.encoder.mean_w.value.at(s, i) = mu[s][i];
            m.prior_means.value.at(s, i) = mu[s][i];
        }
    }
    m.encoder.mean_b.value.fill(0.0);
    m.dec_w.value.fill(0.0);
    m.dec_w.value.at(0, 0) = 1.0;
    m.dec_w.value.at(1, 1) = 1.0;
    m.dec_b.value.fill(0.0);

    // Action 0 cycles 0 -> 1 -> 2 -> 0, action 1 stays put.
    m.trans_logits.value.fill(0.0);
    auto pin = [&](int action, int from, int to) {
        m.trans_logits.value.at(action * 3 + from, to) = 1000.0;
    };
    for (int s = 0; s < 3; ++s) {
        pin(0, s, (s + 1) % 3);
        pin(1, s, s);
    }

    TransitionDataset& ds = setup.ds;
    ds.env_id = "ideal";
    ds.n_actions = 2;
    ds.n_tasks = 1;
    auto one_hot = [](int s) {
        std::vector<double> f(3, 0.0);
        f[s] = 1.0;
        return f;
    };
    for (int s = 0; s < 3; ++s) {
        for (int a = 0; a < 2; ++a) {
            LabeledTransition tr;
            tr.s_t = {s, one_hot(s)};
            tr.a = a;
            int next = a == 0 ? (s + 1) % 3 : s;
            tr.s_next = {next, one_hot(next)};
            tr.y = mu[s];  // decoder output for this state's latent
            ds.transitions.push_back(tr);
        }
    }
    return setup;
}

}  // namespace

TEST_CASE("idealized loss hits beta log K on a perfectly clustered model") {
    IdealSetup setup = make_ideal_setup();
    double expect = 0.1 * std::log(3.0);
    double loss = idealized_vib_loss(setup.model,
                                     std::span<const LabeledTransition>(setup.ds.transitions));
    REQUIRE(loss == Catch::Approx(expect).margin(1e-12));

    // The public entry point dispatches to the same computation.
    setup.model.config.idealized_mode = true;
    Rng rng(1);
    REQUIRE(vib_loss(setup.model, std::span<const LabeledTransition>(setup.ds.transitions), rng) ==
            Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("idealized loss grows when predictions or transitions degrade") {
    double ideal = 0.1 * std::log(3.0);

    IdealSetup bad_dec = make_ideal_setup();
    bad_dec.model.dec_b.value.data[0] += 0.5;
    REQUIRE(idealized_vib_loss(bad_dec.model,
                               std::span<const LabeledTransition>(bad_dec.ds.transitions)) >
            ideal + 1e-3);

    IdealSetup bad_trans = make_ideal_setup();
    bad_trans.model.trans_logits.value.fill(0.0);  // uniform rows
    double blurred = idealized_vib_loss(
        bad_trans.model, std::span<const LabeledTransition>(bad_trans.ds.transitions));
    REQUIRE(blurred == Catch::Approx(ideal + 0.1 * std::log(3.0)).margin(1e-9));
}

TEST_CASE("training reduces the objective on separable clusters") {
    Rng data_rng(81);
    TransitionDataset ds = toy_cluster_dataset(400, data_rng);
    VibConfig cfg;
    cfg.K = 2;
    cfg.d = 2;
    cfg.prior_kind = "gmm";
    cfg.steps = 300;
    cfg.batch_size = 32;
    cfg.restarts = 2;
    cfg.encoder_hidden = {16};
    Rng rng(82);
    VibTrainResult result = train_vib(ds, cfg, rng);

    REQUIRE(result.trace.size() == 300);
    REQUIRE(result.restart_losses.size() == 2);
    REQUIRE(result.chosen_restart ==
            (result.restart_losses[0] <= result.restart_losses[1] ? 0 : 1));
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 20; ++i) {
        head += result.trace[i].loss / 20.0;
        tail += result.trace[result.trace.size() - 1 - i].loss / 20.0;
    }
    // Warm-up keeps early rate terms small, so compare the full objective at
    // matched beta: the tail must beat the first fully-weighted steps.
    REQUIRE(tail < head);
    for (const VibTraceEntry& e : result.trace) {
        REQUIRE(std::isfinite(e.loss));
        REQUIRE(e.beta <= cfg.beta + 1e-12);
    }
    REQUIRE(result.trace.front().beta < cfg.beta);
    REQUIRE(result.trace.back().beta == Catch::Approx(cfg.beta).margin(1e-12));
}

TEST_CASE("saved models reload with identical parameters") {
    for (const std::string& kind : {std::string("gmm"), std::string("hmm")}) {
        VibConfig cfg;
        cfg.K = 4;
        cfg.d = 3;
        cfg.prior_kind = kind;
        cfg.encoder_hidden = {6, 5};
        Rng rng(91);
        VibModel model = make_vib_model(cfg, 4, 3, 2, rng);
        std::string path = "/tmp/vibsim_test_model_" + kind + ".json";
        save_vib_model(path, model);
        VibModel loaded = load_vib_model(path);
        std::remove(path.c_str());

        REQUIRE(loaded.config.K == cfg.K);
        REQUIRE(loaded.config.d == cfg.d);
        REQUIRE(loaded.config.prior_kind == kind);
        REQUIRE(loaded.config.encoder_hidden == cfg.encoder_hidden);
        REQUIRE(loaded.feature_dim == 4);
        REQUIRE(loaded.n_actions == 3);
        REQUIRE(loaded.n_tasks == 2);
        std::vector<nn::Parameter*> a = model.params();
        std::vector<nn::Parameter*> b = loaded.params();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i]->id == b[i]->id);
            REQUIRE(a[i]->value.data == b[i]->value.data);
        }
    }
}

TEST_CASE("loss gradients agree with finite differences on small models") {
    Rng data_rng(95);
    TransitionDataset ds = toy_cluster_dataset(5, data_rng);
    for (const std::string& kind : {std::string("gmm"), std::string("hmm")}) {
        VibConfig cfg;
        cfg.K = 3;
        cfg.d = 2;
        cfg.prior_kind = kind;
        cfg.encoder_hidden = {6};
        Rng rng(96);
        VibModel model = make_vib_model(cfg, 2, 2, 1, rng);
        VibBatch batch = batch_from(ds, 5);
        nn::Tensor noise_t(5, 2), noise_n(5, 2);
        Rng noise_rng(97);
        draw_noise(noise_t, noise_rng);
        draw_noise(noise_n, noise_rng);
        VibLossGraph lg = build_vib_loss(model, batch, noise_t, noise_n, 0.1);
        test::GradCheckResult check =
            test::finite_difference_check(lg.g, lg.loss, model.params());
        INFO("prior " << kind << ", worst parameter " << check.worst_param);
        REQUIRE(check.max_rel_err < 1e-4);
    }
}

TEST_CASE("transition rows of the prior normalize") {
    VibConfig cfg;
    cfg.K = 4;
    cfg.d = 2;
    cfg.prior_kind = "hmm";
    Rng rng(101);
    VibModel model = make_vib_model(cfg, 3, 3, 1, rng);
    std::normal_distribution<double> normal(0.0, 2.0);
    for (double& v : model.trans_logits.value.data) v = normal(rng);
    HmmPrior prior = model.hmm_prior();
    for (int r = 0; r < prior.log_transition.rows; ++r) {
        double sum = 0.0;
        for (int c = 0; c < cfg.K; ++c) sum += std::exp(prior.log_transition.at(r, c));
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("loss construction rejects malformed inputs") {
    Rng rng(111);
    TransitionDataset ds = toy_cluster_dataset(4, rng);
    VibConfig cfg;
    cfg.K = 2;
    cfg.d = 2;
    Rng mrng(112);
    VibModel model = make_vib_model(cfg, 2, 2, 1, mrng);
    VibBatch batch = batch_from(ds, 4);

    nn::Tensor bad_noise(3, 2), good_noise(4, 2);
    REQUIRE_THROWS_AS(build_vib_loss(model, batch, bad_noise, good_noise, 0.1), UsageError);

    VibBatch wide = batch;
    wide.y = nn::Tensor(4, 3);
    REQUIRE_THROWS_AS(build_vib_loss(model, wide, good_noise, good_noise, 0.1), UsageError);

    REQUIRE_THROWS_AS(make_vib_batch(ds, {}), UsageError);
    REQUIRE_THROWS_AS(vib_loss(model, std::span<const LabeledTransition>(), rng), UsageError);
}

TEST_CASE("batch assembly copies rows faithfully") {
    Rng rng(121);
    TransitionDataset ds = toy_cluster_dataset(10, rng);
    std::vector<int> idx{7, 2, 2, 9};
    VibBatch batch = make_vib_batch(ds, idx);
    REQUIRE(batch.size == 4);
    for (int i = 0; i < 4; ++i) {
        const LabeledTransition& tr = ds.transitions[idx[i]];
        for (int j = 0; j < 2; ++j) {
            REQUIRE(batch.x_t.at(i, j) == tr.s_t.features[j]);
            REQUIRE(batch.x_next.at(i, j) == tr.s_next.features[j]);
            REQUIRE(batch.y.at(i, j) == tr.y[j]);
        }
        REQUIRE(batch.actions[i] == tr.a);
    }
}
