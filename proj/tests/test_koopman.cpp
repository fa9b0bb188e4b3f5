#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "kfc/dataset.hpp"
#include "kfc/errors.hpp"
#include "kfc/koopman.hpp"
#include "kfc/rng.hpp"
#include "test_support.hpp"

using namespace kfc::koopman;
using kfc::Dataset;
using kfc::Rng;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Trajectories of the exact bilinear system s' = (K0 + a K1) s with random
// +-1 actions.
Dataset bilinear_dataset(const MatrixXd& k0, const MatrixXd& k1, int n, std::uint64_t seed) {
    const int dim = static_cast<int>(k0.rows());
    Dataset d;
    d.state_dim = dim;
    d.action_dim = 1;
    d.states_t.resize(n, dim);
    d.actions.resize(n, 1);
    d.rewards = Eigen::VectorXd::Ones(n);
    d.states_t1.resize(n, dim);
    Rng rng(seed);
    VectorXd s = VectorXd::Zero(dim);
    for (int i = 0; i < n; ++i) {
        if (i % 50 == 0) {
            for (int j = 0; j < dim; ++j) s(j) = rng.uniform(-1.0, 1.0);
        }
        const double a = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const VectorXd s1 = (k0 + a * k1) * s;
        d.states_t.row(i) = s.transpose();
        d.actions(i, 0) = a;
        d.states_t1.row(i) = s1.transpose();
        s = s1;
    }
    return d;
}

KoopmanForwardModel identity_model(const MatrixXd& k0, const std::vector<MatrixXd>& forcing) {
    KoopmanForwardModel m;
    m.k0 = k0;
    m.k_forcing = forcing;
    m.latent_dim = static_cast<int>(k0.rows());
    m.state_dim = m.latent_dim;
    m.action_dim = static_cast<int>(forcing.size());
    return m;
}

}  // namespace

TEST_CASE("k_of_a is the bilinear family") {
    Rng rng(1);
    const MatrixXd k0 = random_matrix(rng, 3, 3);
    const MatrixXd k1 = random_matrix(rng, 3, 3);
    const MatrixXd k2 = random_matrix(rng, 3, 3);
    const auto m = identity_model(k0, {k1, k2});

    CHECK((m.k_of_a(VectorXd::Zero(2)) - k0).norm() == 0.0);
    VectorXd a(2);
    a << 1.0, 1.0;
    CHECK((m.k_of_a(a) - (k0 + k1 + k2)).norm() == 0.0);
    a << 0.3, -0.7;
    CHECK((m.k_of_a(a) - (k0 + 0.3 * k1 - 0.7 * k2)).norm() < 1e-14);
}

TEST_CASE("predict_next with identity operator returns the state") {
    const auto m = identity_model(MatrixXd::Identity(4, 4), {MatrixXd::Zero(4, 4)});
    Rng rng(2);
    const VectorXd s = random_matrix(rng, 4, 1);
    CHECK((m.predict_next(s, VectorXd::Zero(1)) - s).norm() == 0.0);
    CHECK((m.reconstruct(s) - s).norm() == 0.0);
    CHECK(m.reconstruct(VectorXd::Zero(4)).norm() == 0.0);
}

TEST_CASE("predict_next is affine in the action for identity observables") {
    Rng rng(3);
    const auto m = identity_model(random_matrix(rng, 3, 3), {random_matrix(rng, 3, 3)});
    const VectorXd s = random_matrix(rng, 3, 1);
    auto at = [](double v) {
        VectorXd a(1);
        a << v;
        return a;
    };
    const VectorXd p0 = m.predict_next(s, at(0.0));
    const VectorXd p1 = m.predict_next(s, at(1.0));
    const VectorXd pmid = m.predict_next(s, at(0.5));
    CHECK((pmid - 0.5 * (p0 + p1)).norm() < 1e-12);
}

TEST_CASE("fit_linear recovers an exact bilinear system") {
    Rng rng(5);
    MatrixXd k0 = 0.5 * random_matrix(rng, 4, 4);
    k0.diagonal().array() += 0.4;
    const MatrixXd k1 = 0.1 * random_matrix(rng, 4, 4);
    const auto d = bilinear_dataset(k0, k1, 500, 7);
    const auto m = fit_linear(d);
    CHECK((m.k0 - k0).norm() <= 1e-8);
    CHECK((m.k_forcing[0] - k1).norm() <= 1e-8);

    // The fitted model reproduces the simulator step.
    const VectorXd s = d.states_t.row(11).transpose();
    const VectorXd a = d.actions.row(11).transpose();
    CHECK((m.predict_next(s, a) - d.states_t1.row(11).transpose()).norm() <= 1e-10);
}

TEST_CASE("fit_linear on a single transition warns about rank deficiency") {
    Rng rng(6);
    const auto full = bilinear_dataset(random_matrix(rng, 3, 3), random_matrix(rng, 3, 3), 40, 8);
    const auto d = full.subsample(1, 0);
    bool warned = false;
    const auto m = fit_linear(d, &warned);
    CHECK(warned);
    // Pseudoinverse solution still fits the one observed transition.
    const VectorXd s = d.states_t.row(0).transpose();
    const VectorXd a = d.actions.row(0).transpose();
    CHECK((m.predict_next(s, a) - d.states_t1.row(0).transpose()).norm() <= 1e-8);
}

TEST_CASE("fit_linear rejects an empty dataset") {
    Dataset d;
    d.state_dim = 2;
    d.action_dim = 1;
    d.states_t.resize(0, 2);
    d.actions.resize(0, 1);
    d.rewards.resize(0);
    d.states_t1.resize(0, 2);
    CHECK_THROWS_AS((void)fit_linear(d), kfc::ValidationError);
}

TEST_CASE("train with identity codec finds the contraction operator") {
    // s' = 0.9 s regardless of action.
    const MatrixXd k0 = 0.9 * MatrixXd::Identity(3, 3);
    const MatrixXd k1 = MatrixXd::Zero(3, 3);
    const auto d = bilinear_dataset(k0, k1, 1000, 9);

    KoopmanTrainConfig cfg;
    cfg.identity_codec = true;
    cfg.epochs = 200;
    cfg.lr = 1e-3;
    cfg.seed = 1;
    TrainReport report;
    const auto m = train(d, cfg, &report);
    CHECK((m.k0 - k0).cwiseAbs().maxCoeff() <= 5e-3);
    CHECK(m.k_forcing[0].cwiseAbs().maxCoeff() <= 5e-3);

    // Training loss decreases in at least 85% of epochs (minibatch jitter).
    int improved = 0;
    for (std::size_t e = 1; e < report.train_losses.size(); ++e) {
        if (report.train_losses[e] <= report.train_losses[e - 1] + 1e-12) ++improved;
    }
    CHECK(improved * 20 >= static_cast<int>(report.train_losses.size() - 1) * 17);
    CHECK(report.val_losses.size() == report.train_losses.size());
}

TEST_CASE("train converges to the closed-form fit on a bilinear system") {
    Rng rng(10);
    MatrixXd k0 = 0.4 * random_matrix(rng, 3, 3);
    k0.diagonal().array() += 0.5;
    const MatrixXd k1 = 0.1 * random_matrix(rng, 3, 3);
    const auto d = bilinear_dataset(k0, k1, 2000, 11);

    const auto closed = fit_linear(d);
    KoopmanTrainConfig cfg;
    cfg.identity_codec = true;
    cfg.epochs = 300;
    cfg.lr = 3e-3;
    cfg.seed = 2;
    const auto m = train(d, cfg);
    CHECK((m.k0 - closed.k0).norm() <= 5e-2);
    CHECK((m.k_forcing[0] - closed.k_forcing[0]).norm() <= 5e-2);
}

TEST_CASE("train rejects an empty dataset") {
    Dataset d;
    d.state_dim = 2;
    d.action_dim = 1;
    d.states_t.resize(0, 2);
    d.actions.resize(0, 1);
    d.rewards.resize(0);
    d.states_t1.resize(0, 2);
    KoopmanTrainConfig cfg;
    CHECK_THROWS_AS((void)train(d, cfg), kfc::ValidationError);
}

TEST_CASE("train is deterministic per seed") {
    Rng rng(12);
    const auto d = bilinear_dataset(0.8 * MatrixXd::Identity(2, 2), 0.05 * random_matrix(rng, 2, 2),
                                    300, 13);
    KoopmanTrainConfig cfg;
    cfg.identity_codec = false;
    cfg.latent_dim = 4;
    cfg.hidden_dims = {16};
    cfg.epochs = 3;
    cfg.seed = 3;
    const auto m1 = train(d, cfg);
    const auto m2 = train(d, cfg);
    CHECK((m1.k0 - m2.k0).norm() == 0.0);
    CHECK((m1.encoder->layers[0].w - m2.encoder->layers[0].w).norm() == 0.0);
}

TEST_CASE("mlp codec training reduces the validation loss") {
    Rng rng(14);
    MatrixXd k0 = 0.5 * random_matrix(rng, 3, 3);
    k0.diagonal().array() += 0.4;
    const auto d = bilinear_dataset(k0, 0.1 * random_matrix(rng, 3, 3), 1500, 15);
    KoopmanTrainConfig cfg;
    cfg.latent_dim = 6;
    cfg.hidden_dims = {32};
    cfg.epochs = 20;
    cfg.seed = 4;
    TrainReport report;
    (void)train(d, cfg, &report);
    REQUIRE(report.val_losses.size() == 20);
    CHECK(report.val_losses.back() < report.val_losses.front());
}
