#pragma once

#include "sal/plasticity.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <optional>
#include <vector>

namespace sal {

struct SpectrumReport {
    std::vector<double> singular_values;  // descending
    double effective_rank = 0.0;
    double min_eigenvalue = 0.0;  // for symmetric inputs (H)
};

// Spectral entropy of the normalized singular values,
// rho(A) = -sum sigma_i_bar * ln(sigma_i_bar).
template <typename S>
double effective_rank(const Matrix<S>& a) {
    Matd ad = a.template cast<double>();
    if (ad.norm() == 0.0) throw ConfigError("effective_rank of all-zero matrix is undefined");
    Eigen::BDCSVD<Matd> svd(ad);
    const Vecd& sv = svd.singularValues();
    const double cutoff = 1e-12 * sv(0);
    double total = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) total += sv(i);
    double ent = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) <= cutoff) continue;
        const double p = sv(i) / total;
        ent -= p * std::log(p);
    }
    return ent;
}

// Relative Frobenius misalignment between V and Vb' at one layer.
template <typename S>
double alignment_error(const TwoStreamNetwork<S>& net, int layer) {
    if (layer < 0 || layer >= net.depth()) throw ConfigError("layer index out of range");
    Matd v = net.V[layer].template cast<double>();
    Matd vbt = net.Vb[layer].transpose().template cast<double>();
    return (v - vbt).norm() / std::max(1.0, v.norm());
}

// H = Vb Vb', the matrix learning rate acting on W at this layer.
template <typename S>
SpectrumReport h_matrix(const TwoStreamNetwork<S>& net, int layer) {
    if (layer < 0 || layer >= net.depth()) throw ConfigError("layer index out of range");
    Matd vb = net.Vb[layer].template cast<double>();
    Matd h = vb * vb.transpose();
    if ((h - h.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, h.norm()))
        throw StateError("H is not symmetric");
    SpectrumReport rep;
    Eigen::SelfAdjointEigenSolver<Matd> es(h);
    const Vecd& ev = es.eigenvalues();  // ascending
    rep.min_eigenvalue = ev(0);
    rep.singular_values.resize(std::size_t(ev.size()));
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        rep.singular_values[std::size_t(i)] = std::abs(ev(ev.size() - 1 - i));
    rep.effective_rank = effective_rank(h);
    return rep;
}

// Per-layer cosine between the SAL Hebbian drive for W (decay excluded)
// and the exact negative gradient. nullopt when either side has zero norm.
template <typename S>
std::vector<std::optional<double>> update_gradient_cosine(const TwoStreamNetwork<S>& net,
                                                          const ActivationTrace<S>& trace,
                                                          const Matrix<S>& y) {
    RuleConfig pure;
    pure.rule = Rule::Sal;
    pure.eta_w = 1.0;
    pure.eta_v = pure.eta_wbar = pure.eta_vbar = 0.0;
    pure.gamma = 0.0;
    pure.mask = {true, false, false, false};
    auto sal = sal_deltas(net, trace, pure);

    RuleConfig gd;
    gd.eta_w = 1.0;
    gd.gamma = 0.0;
    auto sgd = sgd_deltas(net, trace, y, gd);

    std::vector<std::optional<double>> out;
    for (std::size_t k = 0; k + 1 < std::size_t(net.depth()); ++k) {
        const double ns = sal.dW[k].template cast<double>().norm();
        const double ng = sgd.dW[k].template cast<double>().norm();
        if (ns == 0.0 || ng == 0.0) {
            out.push_back(std::nullopt);
            continue;
        }
        const double dot =
            (sal.dW[k].template cast<double>().array() * sgd.dW[k].template cast<double>().array())
                .sum();
        out.push_back(dot / (ns * ng));
    }
    return out;
}

// Short-term modulation probe: rerun the forward pass with
// h^l -> h^l + alpha * Vb^l hbar^l accumulated layer by layer.
template <typename S>
struct ModulationResult {
    Matrix<S> y_hat;
    double loss_delta = 0.0;
};

template <typename S>
ModulationResult<S> short_term_modulate(const TwoStreamNetwork<S>& net,
                                        const ActivationTrace<S>& trace, const Matrix<S>& y,
                                        double alpha) {
    if (alpha < 0.0) throw ConfigError("alpha must be nonnegative");
    if (!trace.feedback_done) throw StateError("modulation requires a completed feedback pass");
    const int L = net.depth();
    Matrix<S> h = trace.h[0] + S(alpha) * (net.Vb[0] * trace.h_bar[0]);
    for (int k = 0; k < L - 1; ++k) {
        Matrix<S> pre;
        pre.noalias() = net.layers[k].W * h;
        if (k < L - 2)
            h = pre.cwiseMax(S(0));
        else
            h = pre;
        h += S(alpha) * (net.Vb[k + 1] * trace.h_bar[k + 1]);
    }
    ModulationResult<S> res;
    res.y_hat = h;
    const double before = double(loss_value(trace.h[L - 1], y, net.loss));
    const double after = double(loss_value(res.y_hat, y, net.loss));
    res.loss_delta = after - before;
    return res;
}

}  // namespace sal
