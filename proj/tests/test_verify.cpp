#include "sal/verify.hpp"

#include <doctest.h>

using namespace sal;

namespace {

// Probe batch resampled until every preactivation is away from the ReLU
// kink, so finite differences stay valid.
Matd safe_probe(TwoStreamNetwork<double>& net, Eigen::Index cols, std::uint64_t seed) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        GaussianRng rng(split_seed(seed, std::uint64_t(attempt)));
        Matd x(net.dims[0].d_up, cols);
        rng.fill_gaussian(x, 1.0);
        ActivationTrace<double> tr;
        forward(net, x, tr);
        double closest = 1e300;
        for (const auto& p : tr.preact) closest = std::min(closest, p.cwiseAbs().minCoeff());
        if (closest > 1e-4) return x;
    }
    throw StateError("could not sample a tie-free probe");
}

}  // namespace

TEST_CASE("finite differences confirm the backprop gradient for both losses") {
    for (LossKind loss : {LossKind::Mse, LossKind::SoftmaxCrossEntropy}) {
        auto net = init_network<double>({{8, 8}, {8, 8}, {8, 8}, {5, 5}}, 60,
                                        InitScale::FanInGaussian, 0.0, loss, Gate::Identity);
        Matd x = safe_probe(net, 3, 61);
        GaussianRng rng(62);
        Matd y(5, 3);
        if (loss == LossKind::Mse) {
            rng.fill_gaussian(y, 1.0);
        } else {
            y.setZero();
            for (int c = 0; c < 3; ++c) y(c % 5, c) = 1.0;
        }
        CHECK(check_finite_diff(net, x, y) <= 1e-7);
    }
}

TEST_CASE("finite_diff_gradient rejects out-of-range layers") {
    auto net = init_network<double>({{3, 3}, {2, 2}}, 63);
    Matd x = Matd(Matd::Ones(3, 1)), y = Matd(Matd::Zero(2, 1));
    CHECK_THROWS_AS(finite_diff_gradient(net, 5, x, y), ConfigError);
    CHECK_THROWS_AS(finite_diff_gradient(net, -1, x, y), ConfigError);
}

TEST_CASE("sgd reduction: tied symmetric configuration matches backprop exactly") {
    GaussianRng rng(64);
    Matd x(8, 16), y(4, 16);
    rng.fill_gaussian(x, 1.0);
    y.setZero();
    for (int c = 0; c < 16; ++c) y(c % 4, c) = 1.0;
    CHECK(check_sgd_reduction(65, x, y, {8, 8, 8, 4}, LossKind::SoftmaxCrossEntropy, 0.05, 0.0) <=
          1e-12);
    Matd ym(4, 16);
    rng.fill_gaussian(ym, 1.0);
    CHECK(check_sgd_reduction(66, x, ym, {8, 8, 8, 4}, LossKind::Mse, 0.05, 0.0) <= 1e-12);
}

TEST_CASE("stationary construction satisfies the structural update identity") {
    GaussianRng rng(70);
    Matd x(6, 1);
    rng.fill_gaussian(x, 1.0);
    Matd y = Matd(Matd::Zero(4, 1));
    y(1, 0) = 1.0;

    struct Case {
        CouplingChoice choice;
        std::vector<int> down;
    };
    const std::vector<Case> cases = {
        {CouplingChoice::Identity, {6, 8, 8, 4}},
        {CouplingChoice::Permutation, {6, 8, 8, 4}},
        {CouplingChoice::RandomWide, {12, 16, 16, 4}},
    };
    for (const auto& c : cases) {
        auto net = make_stationary_network({6, 8, 8, 4}, c.down, c.choice, 71, x,
                                           LossKind::SoftmaxCrossEntropy);
        CHECK(check_stationary_updates(net, x, y, 0.1, 1e-3) <= 1e-9);
        // H must stay PSD in every configuration
        for (int j = 0; j < net.depth(); ++j)
            CHECK(h_matrix(net, j).min_eigenvalue >= -1e-10);
    }
}

TEST_CASE("permutation couplings give H equal to the identity") {
    Matd x = Matd(Matd::Ones(5, 1));
    auto net = make_stationary_network({5, 7, 3}, {5, 7, 3}, CouplingChoice::Permutation, 72, x,
                                       LossKind::Mse);
    for (int j = 0; j < net.depth(); ++j) {
        Matd h = net.Vb[j] * net.Vb[j].transpose();
        CHECK(h.isApprox(Matd::Identity(h.rows(), h.cols()), 1e-12));
    }
}

TEST_CASE("coupling construction rejects invalid shapes") {
    Matd x = Matd(Matd::Ones(4, 1));
    CHECK_THROWS_AS(make_stationary_network({4, 5, 3}, {4, 6, 3}, CouplingChoice::Identity, 1, x,
                                            LossKind::Mse),
                    ConfigError);
    CHECK_THROWS_AS(make_stationary_network({4, 5, 3}, {4, 4, 3}, CouplingChoice::RandomWide, 1, x,
                                            LossKind::Mse),
                    ConfigError);
}

TEST_CASE("alignment error decays by exactly (1 - gamma) per staged step") {
    for (double gamma : {0.01, 0.1}) {
        auto net = init_network<double>({{5, 8}, {6, 9}, {4, 4}}, 80);
        GaussianRng rng(81);
        RuleConfig cfg;
        cfg.eta_v = cfg.eta_vbar = 0.003;
        cfg.gamma = gamma;
        cfg.mask = {false, true, false, true};
        auto step = [&](TwoStreamNetwork<double>& n) {
            Matd x(5, 4), y(4, 4);
            rng.fill_gaussian(x, 1.0);
            rng.fill_gaussian(y, 1.0);
            ActivationTrace<double> tr;
            Matd y_hat = forward(n, x, tr);
            feedback(n, tr, error_signal(y_hat, y, n.loss));
            apply(n, sal_deltas(n, tr, cfg));
        };
        CHECK(check_alignment_decay(net, step, 50, gamma) <= 1e-10);
    }
}

TEST_CASE("aligned couplings stay aligned forever") {
    auto net = init_network<double>({{5, 8}, {4, 4}}, 82);
    net.Vb[0] = net.V[0].transpose();
    GaussianRng rng(83);
    RuleConfig cfg;
    cfg.eta_v = cfg.eta_vbar = 0.01;
    cfg.gamma = 0.05;
    cfg.mask = {false, true, false, true};
    for (int s = 0; s < 20; ++s) {
        Matd x(5, 3), y(4, 3);
        rng.fill_gaussian(x, 1.0);
        rng.fill_gaussian(y, 1.0);
        ActivationTrace<double> tr;
        Matd y_hat = forward(net, x, tr);
        feedback(net, tr, error_signal(y_hat, y, net.loss));
        apply(net, sal_deltas(net, tr, cfg));
        CHECK((net.V[0] - net.Vb[0].transpose()).norm() <= 1e-12);
    }
}

TEST_CASE("one SAL step in the stationary configuration descends the loss") {
    GaussianRng rng(90);
    Matd x(6, 1);
    rng.fill_gaussian(x, 1.0);
    Matd y = Matd(Matd::Zero(3, 1));
    y(0, 0) = 1.0;
    auto net = make_stationary_network({6, 8, 3}, {6, 8, 3}, CouplingChoice::Permutation, 91, x,
                                       LossKind::SoftmaxCrossEntropy);
    CHECK(check_descent(net, x, y, {1e-2, 1e-3, 1e-4}) <= 1e-12);
}

TEST_CASE("every staged delta matches its local-loss gradient flow") {
    auto net = init_network<double>({{5, 8}, {7, 9}, {4, 4}}, 92);
    GaussianRng rng(93);
    Matd x(5, 6), y(4, 6);
    rng.fill_gaussian(x, 1.0);
    rng.fill_gaussian(y, 1.0);
    RuleConfig cfg;
    cfg.eta_w = 0.02;
    cfg.eta_v = 0.003;
    cfg.eta_wbar = 0.007;
    cfg.eta_vbar = 0.005;
    cfg.gamma = 0.01;
    CHECK(check_local_losses(net, x, y, cfg) <= 1e-12);
}

TEST_CASE("check report aggregates pass and fail") {
    CheckReport rep;
    rep.add("a", 1e-9, 1e-6);
    CHECK(rep.all_passed());
    rep.add("b", 2.0, 1.0, "too big");
    CHECK_FALSE(rep.all_passed());
    CHECK(rep.results[1].name == "b");
    CHECK(rep.results[1].observed == doctest::Approx(2.0));
}
