#pragma once

#include "sal/analysis.hpp"

#include <Eigen/QR>

#include <cmath>
#include <string>
#include <vector>

namespace sal {

struct CheckResult {
    std::string name;
    bool passed = false;
    double observed = 0.0;   // the measured discrepancy or margin
    double threshold = 0.0;  // what it was compared against
    std::string detail;
};

struct CheckReport {
    std::vector<CheckResult> results;
    bool all_passed() const {
        for (const auto& r : results)
            if (!r.passed) return false;
        return true;
    }
    void add(std::string name, double observed, double threshold, std::string detail = "") {
        results.push_back({std::move(name), observed <= threshold, observed, threshold,
                           std::move(detail)});
    }
};

// Central-difference gradient of the loss with respect to W[layer],
// computed entry by entry. O(rows*cols) forward passes; intended for
// small probe networks only.
inline Matd finite_diff_gradient(TwoStreamNetwork<double>& net, int layer, const Matd& x,
                                 const Matd& y, double eps = 1e-6) {
    if (layer < 0 || layer >= net.depth() - 1) throw ConfigError("layer index out of range");
    Matd& w = net.layers[layer].W;
    Matd g(w.rows(), w.cols());
    const double inv_b = 1.0 / double(x.cols());
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            const double saved = w(r, c);
            w(r, c) = saved + eps;
            const double fp = loss_value(forward(net, x), y, net.loss) * inv_b;
            w(r, c) = saved - eps;
            const double fm = loss_value(forward(net, x), y, net.loss) * inv_b;
            w(r, c) = saved;
            g(r, c) = (fp - fm) / (2 * eps);
        }
    return g;
}

// max |analytic + finite-diff| over all weight layers; the analytic side
// is the negative gradient, so the sum should vanish.
inline double check_finite_diff(TwoStreamNetwork<double>& net, const Matd& x, const Matd& y,
                                double eps = 1e-6) {
    ActivationTrace<double> tr;
    forward(net, x, tr);
    RuleConfig cfg;
    cfg.eta_w = 1.0;
    cfg.gamma = 0.0;
    auto sgd = sgd_deltas(net, tr, y, cfg);
    double worst = 0.0;
    for (int k = 0; k < net.depth() - 1; ++k) {
        Matd fd = finite_diff_gradient(net, k, x, y, eps);
        worst = std::max(worst, (sgd.dW[k] + fd).cwiseAbs().maxCoeff());
    }
    return worst;
}

// Pick V couplings for the stationarity construction.
enum class CouplingChoice { Identity, Permutation, RandomWide };

namespace detail {

inline Matd make_coupling(CouplingChoice choice, int d_down, int d_up, std::uint64_t seed) {
    switch (choice) {
        case CouplingChoice::Identity:
            if (d_down != d_up) throw ConfigError("identity coupling needs square dims");
            return Matd::Identity(d_down, d_up);
        case CouplingChoice::Permutation: {
            if (d_down != d_up) throw ConfigError("permutation coupling needs square dims");
            Matd p = Matd::Zero(d_down, d_up);
            std::vector<int> idx(static_cast<std::size_t>(d_up));
            std::iota(idx.begin(), idx.end(), 0);
            std::mt19937_64 eng(split_seed(seed, 77));
            std::shuffle(idx.begin(), idx.end(), eng);
            for (int i = 0; i < d_up; ++i) p(i, idx[std::size_t(i)]) = 1.0;
            return p;
        }
        case CouplingChoice::RandomWide: {
            if (d_down < d_up) throw ConfigError("wide coupling needs d_down >= d_up");
            Matd m(d_down, d_up);
            GaussianRng rng(split_seed(seed, 99));
            rng.fill_gaussian(m, 1.0 / std::sqrt(double(d_up)));
            return m;
        }
    }
    throw ConfigError("unknown coupling choice");
}

}  // namespace detail

// Build the stationary two-stream configuration around a given upstream
// stack: for each weight slot l, Wb^l := V^l D^l (W^l)' pinv(V^{l+1}),
// where D^l is the diagonal ReLU mask of the reference input. With
// Vb = V', Vb/V frozen and the identity gate, the staged update obeys
//   dSAL W^l = H^l dSGD W^l - gamma W^l,   H^l = Vb^l (Vb^l)'.
// Valid on inputs whose masks match the reference (use the reference
// batch itself).
inline TwoStreamNetwork<double> make_stationary_network(const std::vector<int>& up_widths,
                                                        const std::vector<int>& down_widths,
                                                        CouplingChoice choice, std::uint64_t seed,
                                                        const Matd& x_ref, LossKind loss) {
    if (up_widths.size() != down_widths.size() || up_widths.size() < 2)
        throw ConfigError("bad width lists");
    const int L = int(up_widths.size());
    std::vector<LayerDims> dims(static_cast<std::size_t>(L));
    for (int j = 0; j < L; ++j) dims[j] = {up_widths[std::size_t(j)], down_widths[std::size_t(j)]};
    auto net = init_network<double>(dims, seed, InitScale::FanInGaussian, 0.0, loss,
                                    Gate::Identity);
    for (int j = 0; j < L; ++j) {
        net.V[j] = detail::make_coupling(choice, dims[std::size_t(j)].d_down,
                                         dims[std::size_t(j)].d_up, split_seed(seed, 1000 + j));
    }
    // output couplings are the identity so hb^L enters unchanged
    net.V[L - 1] = Matd::Identity(dims.back().d_down, dims.back().d_up);
    for (int j = 0; j < L; ++j) net.Vb[j] = net.V[j].transpose();

    // reference masks from a probe forward pass
    ActivationTrace<double> tr;
    forward(net, x_ref, tr);
    for (int l = 0; l < L - 1; ++l) {
        Vecd mask;
        if (l == 0)
            mask = Vecd::Ones(dims[0].d_up);  // input layer has no ReLU
        else {
            if (tr.h[l].cols() < 1) throw StateError("empty reference batch");
            mask = (tr.preact[l - 1].col(0).array() > 0.0).cast<double>();
        }
        Matd pinv_v_next = net.V[std::size_t(l) + 1]
                               .completeOrthogonalDecomposition()
                               .pseudoInverse();
        net.layers[std::size_t(l)].Wb =
            net.V[std::size_t(l)] * mask.asDiagonal() * net.layers[std::size_t(l)].W.transpose() *
            pinv_v_next;
    }
    return net;
}

// Max elementwise gap of dSAL W - (H dSGD W - gamma W) over all layers,
// evaluated on the same batch that fixed the masks.
inline double check_stationary_updates(TwoStreamNetwork<double>& net, const Matd& x, const Matd& y,
                                       double eta, double gamma) {
    ActivationTrace<double> tr;
    forward(net, x, tr);
    feedback(net, tr, error_signal(tr.h[net.depth() - 1], y, net.loss));
    RuleConfig sal_cfg;
    sal_cfg.eta_w = eta;
    sal_cfg.gamma = gamma;
    sal_cfg.mask = {true, false, false, false};
    auto sal = sal_deltas(net, tr, sal_cfg);
    RuleConfig gd;
    gd.eta_w = eta;
    gd.gamma = 0.0;
    auto sgd = sgd_deltas(net, tr, y, gd);
    double worst = 0.0;
    for (int l = 0; l < net.depth() - 1; ++l) {
        Matd h = net.Vb[std::size_t(l) + 1] * net.Vb[std::size_t(l) + 1].transpose();
        Matd expected = h * sgd.dW[std::size_t(l)] - gamma * net.layers[std::size_t(l)].W;
        worst = std::max(worst, (sal.dW[std::size_t(l)] - expected).cwiseAbs().maxCoeff());
    }
    return worst;
}

// Exact equivalence with backprop in the reduced configuration:
// V = Vb = I, Wb = W', ReluOfVh gate. Returns max elementwise gap
// between the SAL and SGD W-updates for one batch.
inline double check_sgd_reduction(std::uint64_t seed, const Matd& x, const Matd& y,
                                  const std::vector<int>& widths, LossKind loss, double eta,
                                  double gamma) {
    const int L = int(widths.size());
    std::vector<LayerDims> dims(static_cast<std::size_t>(L));
    for (int j = 0; j < L; ++j) dims[j] = {widths[std::size_t(j)], widths[std::size_t(j)]};
    auto net = init_network<double>(dims, seed, InitScale::FanInGaussian, 0.0, loss,
                                    Gate::ReluOfVh);
    for (int j = 0; j < L; ++j) {
        net.V[j] = Matd::Identity(dims[std::size_t(j)].d_down, dims[std::size_t(j)].d_up);
        net.Vb[j] = net.V[j].transpose();
    }
    for (int k = 0; k < L - 1; ++k) net.layers[std::size_t(k)].Wb = net.layers[std::size_t(k)].W.transpose();

    ActivationTrace<double> tr;
    forward(net, x, tr);
    feedback(net, tr, error_signal(tr.h[L - 1], y, net.loss));
    RuleConfig sal_cfg;
    sal_cfg.eta_w = eta;
    sal_cfg.gamma = gamma;
    sal_cfg.mask = {true, false, false, false};
    auto sal = sal_deltas(net, tr, sal_cfg);
    RuleConfig gd;
    gd.eta_w = eta;
    gd.gamma = gamma;
    auto sgd = sgd_deltas(net, tr, y, gd);
    double worst = 0.0;
    for (int k = 0; k < L - 1; ++k)
        worst = std::max(worst,
                         (sal.dW[std::size_t(k)] - sgd.dW[std::size_t(k)]).cwiseAbs().maxCoeff());
    return worst;
}

// Coupling alignment under shared learning rates: with eta_v == eta_vb,
// ||V - Vb'||_F shrinks by exactly (1 - gamma) per staged step at every
// layer below the output. Returns the max relative deviation from the
// predicted decay over `steps` steps.
template <typename StepFn>
double check_alignment_decay(TwoStreamNetwork<double>& net, StepFn step, int steps, double gamma) {
    const int L = net.depth();
    double worst = 0.0;
    for (int s = 0; s < steps; ++s) {
        std::vector<double> before(static_cast<std::size_t>(L - 1));
        for (int j = 0; j < L - 1; ++j)
            before[std::size_t(j)] = (net.V[j] - net.Vb[j].transpose()).norm();
        step(net);
        for (int j = 0; j < L - 1; ++j) {
            const double after = (net.V[j] - net.Vb[j].transpose()).norm();
            const double predicted = (1.0 - gamma) * before[std::size_t(j)];
            const double scale = std::max(1.0, before[std::size_t(j)]);
            worst = std::max(worst, std::abs(after - predicted) / scale);
        }
    }
    return worst;
}

// One-step descent probe: in the stationary configuration with gamma = 0
// the SAL step must not increase the loss (up to `slack`). Returns the
// worst observed increase over trials with shrinking step sizes.
inline double check_descent(TwoStreamNetwork<double>& net, const Matd& x, const Matd& y,
                            const std::vector<double>& etas) {
    double worst = 0.0;
    const double inv_b = 1.0 / double(x.cols());
    for (double eta : etas) {
        auto trial = net;
        ActivationTrace<double> tr;
        forward(trial, x, tr);
        const double before = loss_value(tr.h[trial.depth() - 1], y, trial.loss) * inv_b;
        feedback(trial, tr, error_signal(tr.h[trial.depth() - 1], y, trial.loss));
        RuleConfig cfg;
        cfg.eta_w = eta;
        cfg.gamma = 0.0;
        cfg.mask = {true, false, false, false};
        apply(trial, sal_deltas(trial, tr, cfg));
        const double after = loss_value(forward(trial, x), y, trial.loss) * inv_b;
        worst = std::max(worst, after - before);
    }
    return worst;
}

// Each staged delta must descend its own local objective: the Hebbian
// part of every update is proportional to the negative gradient of the
// corresponding local loss (trace coupling with weight decay). Returns
// the max relative gap between each delta and -eta * grad - gamma * X
// over all four families.
inline double check_local_losses(TwoStreamNetwork<double>& net, const Matd& x, const Matd& y,
                                 const RuleConfig& cfg) {
    ActivationTrace<double> tr;
    forward(net, x, tr);
    feedback(net, tr, error_signal(tr.h[net.depth() - 1], y, net.loss));
    auto u = sal_deltas(net, tr, cfg);
    const int L = net.depth();
    const double inv_b = 1.0 / double(x.cols());
    double worst = 0.0;
    auto rel_gap = [&](const Matd& delta, const Matd& drive, double eta, const Matd& decayed) {
        Matd expected = eta * drive - cfg.gamma * decayed;
        const double scale = std::max(1.0, expected.norm());
        return (delta - expected).norm() / scale;
    };
    // local loss for W^k:  -Tr[(Vb^{k+1} hb^{k+1}) (W^k h^k)'] averaged over batch
    for (int k = 0; k < L - 1; ++k) {
        Matd drive = (net.Vb[k + 1] * tr.h_bar[k + 1]) * tr.h[k].transpose() * inv_b;
        worst = std::max(worst, rel_gap(u.dW[k], drive, cfg.eta_w, net.layers[k].W));
    }
    // local loss for V^j:  -Tr[hb^j (V^j h^j)'] -- note dV is Hebbian in (hb, h)
    for (int j = 0; j < L; ++j) {
        Matd drive = tr.h_bar[j] * tr.h[j].transpose() * inv_b;
        worst = std::max(worst, rel_gap(u.dV[j], drive, cfg.eta_v, net.V[j]));
    }
    // local loss for Wb^k: -Tr[(V^k h^k) (Wb^k hb^{k+1})']
    for (int k = 0; k < L - 1; ++k) {
        Matd drive = (net.V[k] * tr.h[k]) * tr.h_bar[k + 1].transpose() * inv_b;
        worst = std::max(worst, rel_gap(u.dWb[k], drive, cfg.eta_wbar, net.layers[k].Wb));
    }
    // local loss for Vb^j: -Tr[h^j (Vb^j hb^j)']
    for (int j = 0; j < L - 1; ++j) {
        Matd drive = tr.h[j] * tr.h_bar[j].transpose() * inv_b;
        worst = std::max(worst, rel_gap(u.dVb[j], drive, cfg.eta_vbar, net.Vb[j]));
    }
    return worst;
}

}  // namespace sal
