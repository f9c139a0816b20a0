#pragma once

#include "sal/pathways.hpp"

#include <string>
#include <vector>

namespace sal {

enum class Rule { Sal, Sgd, Fa, Wm, Kp };

struct PlasticityMask {
    bool w = true;
    bool v = true;
    bool wbar = true;
    bool vbar = true;
};

struct RuleConfig {
    Rule rule = Rule::Sal;
    double eta_w = 0.0;
    double eta_v = 0.0;
    double eta_wbar = 0.0;
    double eta_vbar = 0.0;
    double gamma = 0.0;
    PlasticityMask mask;
    Gate gate = Gate::Identity;
    // Weight Mirroring phase parameters
    double mirror_eta = 0.0;
    double mirror_noise_std = 1.0;
    int mirror_batch = 256;

    void validate() const {
        if (eta_w < 0 || eta_v < 0 || eta_wbar < 0 || eta_vbar < 0)
            throw ConfigError("learning rates must be nonnegative");
        if (gamma < 0 || gamma >= 1) throw ConfigError("gamma must be in [0, 1)");
        if (rule == Rule::Fa && mask.wbar)
            throw ConfigError("feedback alignment requires frozen Wbar");
        if (rule == Rule::Wm && mirror_noise_std <= 0)
            throw ConfigError("mirror_noise_std must be positive");
    }
};

// Staging buffer: every delta in a step is computed from pre-update
// weights, then applied at once.
template <typename S>
struct UpdateBatch {
    std::vector<Matrix<S>> dW;
    std::vector<Matrix<S>> dWb;
    std::vector<Matrix<S>> dV;
    std::vector<Matrix<S>> dVb;

    static UpdateBatch zeros_like(const TwoStreamNetwork<S>& net) {
        UpdateBatch u;
        const int L = net.depth();
        u.dW.resize(L - 1);
        u.dWb.resize(L - 1);
        u.dV.resize(L);
        u.dVb.resize(L);
        for (int k = 0; k < L - 1; ++k) {
            u.dW[k] = Matrix<S>::Zero(net.layers[k].W.rows(), net.layers[k].W.cols());
            u.dWb[k] = Matrix<S>::Zero(net.layers[k].Wb.rows(), net.layers[k].Wb.cols());
        }
        for (int j = 0; j < L; ++j) {
            u.dV[j] = Matrix<S>::Zero(net.V[j].rows(), net.V[j].cols());
            u.dVb[j] = Matrix<S>::Zero(net.Vb[j].rows(), net.Vb[j].cols());
        }
        return u;
    }

    UpdateBatch& operator+=(const UpdateBatch& o) {
        for (std::size_t i = 0; i < dW.size(); ++i) dW[i] += o.dW[i];
        for (std::size_t i = 0; i < dWb.size(); ++i) dWb[i] += o.dWb[i];
        for (std::size_t i = 0; i < dV.size(); ++i) dV[i] += o.dV[i];
        for (std::size_t i = 0; i < dVb.size(); ++i) dVb[i] += o.dVb[i];
        return *this;
    }
};

// SAL heterosynaptic update. Batch outer products are averaged; all
// Hebbian drives are computed from the shared forward/feedback trace.
//   dW^k      = eta_w  * Vb^{k+1} <hb^{k+1} h^k'> - gamma W^k
//   dV^j      = eta_v  * <hb^j h^j'>              - gamma V^j
//   d(Wb^k)'  = eta_wb * <hb^{k+1} h^k'> (V^k)'   - gamma (Wb^k)'
//   d(Vb^j)'  = eta_vb * <hb^j h^j'>              - gamma (Vb^j)'
// Vb at the output layer is never updated.
template <typename S>
UpdateBatch<S> sal_deltas(const TwoStreamNetwork<S>& net, const ActivationTrace<S>& trace,
                          const RuleConfig& cfg) {
    if (!trace.feedback_done) throw StateError("sal_deltas requires a completed feedback pass");
    const int L = net.depth();
    const S inv_b = S(1) / S(trace.batch());
    const S gamma = S(cfg.gamma);
    auto u = UpdateBatch<S>::zeros_like(net);

    // cross-layer drives M[k] = <hb^{k+1} (h^k)'>, shared by dW and dWb
    std::vector<Matrix<S>> M(static_cast<std::size_t>(L - 1));
    for (int k = 0; k < L - 1; ++k) {
        if (cfg.mask.w || cfg.mask.wbar)
            M[k].noalias() = (trace.h_bar[k + 1] * trace.h[k].transpose()) * inv_b;
    }
    // same-layer drives N[j] = <hb^j (h^j)'>, shared by dV and dVb
    std::vector<Matrix<S>> N(static_cast<std::size_t>(L));
    for (int j = 0; j < L; ++j) {
        if (cfg.mask.v || cfg.mask.vbar)
            N[j].noalias() = (trace.h_bar[j] * trace.h[j].transpose()) * inv_b;
    }

    if (cfg.mask.w)
        for (int k = 0; k < L - 1; ++k) {
            u.dW[k].noalias() = S(cfg.eta_w) * (net.Vb[k + 1] * M[k]);
            u.dW[k] -= gamma * net.layers[k].W;
        }
    if (cfg.mask.wbar)
        for (int k = 0; k < L - 1; ++k) {
            // delta is defined on (Wb)'; store it transposed back
            u.dWb[k].noalias() = S(cfg.eta_wbar) * (net.V[k] * M[k].transpose());
            u.dWb[k] -= gamma * net.layers[k].Wb;
        }
    if (cfg.mask.v)
        for (int j = 0; j < L; ++j) {
            u.dV[j] = S(cfg.eta_v) * N[j] - gamma * net.V[j];
        }
    if (cfg.mask.vbar)
        for (int j = 0; j < L - 1; ++j) {
            u.dVb[j] = S(cfg.eta_vbar) * N[j].transpose() - gamma * net.Vb[j];
        }
    return u;
}

// Exact backpropagation for the upstream ReLU stack; only W is updated.
// Independent of the feedback trace by construction.
template <typename S>
UpdateBatch<S> sgd_deltas(const TwoStreamNetwork<S>& net, const ActivationTrace<S>& trace,
                          const Matrix<S>& y, const RuleConfig& cfg) {
    if (!trace.forward_done) throw StateError("sgd_deltas requires a completed forward pass");
    const int L = net.depth();
    const S inv_b = S(1) / S(trace.batch());
    auto u = UpdateBatch<S>::zeros_like(net);

    // p = -dF/d(preact[k]); output layer is linear
    Matrix<S> p = error_signal(trace.h[L - 1], y, net.loss);
    for (int k = L - 2; k >= 0; --k) {
        u.dW[k].noalias() = S(cfg.eta_w) * inv_b * (p * trace.h[k].transpose());
        u.dW[k] -= S(cfg.gamma) * net.layers[k].W;
        if (k > 0) {
            Matrix<S> back;
            back.noalias() = net.layers[k].W.transpose() * p;
            p = (trace.preact[k - 1].array() > S(0)).select(back, S(0));
        }
    }
    return u;
}

// Feedback Alignment: error travels through a fixed random Wb; only W
// learns. The caller must configure V = Vb = I and the ReluOfVh gate so
// the downstream pass applies the upstream ReLU mask.
template <typename S>
UpdateBatch<S> fa_deltas(const TwoStreamNetwork<S>& net, const ActivationTrace<S>& trace,
                         const RuleConfig& cfg) {
    if (!trace.feedback_done) throw StateError("fa_deltas requires a completed feedback pass");
    if (cfg.mask.wbar) throw ConfigError("feedback alignment requires frozen Wbar");
    const int L = net.depth();
    for (int j = 0; j < L; ++j)
        if (net.dims[j].d_up != net.dims[j].d_down)
            throw ConfigError("FA requires square pathways (d_down == d_up)");
    const S inv_b = S(1) / S(trace.batch());
    auto u = UpdateBatch<S>::zeros_like(net);
    for (int k = 0; k < L - 1; ++k) {
        u.dW[k].noalias() = S(cfg.eta_w) * inv_b * (trace.h_bar[k + 1] * trace.h[k].transpose());
        u.dW[k] -= S(cfg.gamma) * net.layers[k].W;
    }
    return u;
}

// Kolen-Pollack: W and Wb' receive identical Hebbian increments, so
// W - Wb' decays geometrically at rate gamma.
template <typename S>
UpdateBatch<S> kp_deltas(const TwoStreamNetwork<S>& net, const ActivationTrace<S>& trace,
                         const RuleConfig& cfg) {
    if (!trace.feedback_done) throw StateError("kp_deltas requires a completed feedback pass");
    const int L = net.depth();
    for (int j = 0; j < L; ++j)
        if (net.dims[j].d_up != net.dims[j].d_down)
            throw ConfigError("KP requires square pathways (d_down == d_up)");
    const S inv_b = S(1) / S(trace.batch());
    auto u = UpdateBatch<S>::zeros_like(net);
    for (int k = 0; k < L - 1; ++k) {
        Matrix<S> inc;
        inc.noalias() = S(cfg.eta_w) * inv_b * (trace.h_bar[k + 1] * trace.h[k].transpose());
        u.dW[k] = inc - S(cfg.gamma) * net.layers[k].W;
        u.dWb[k] = inc.transpose() - S(cfg.gamma) * net.layers[k].Wb;
    }
    return u;
}

// Weight Mirroring learning phase is FA-shaped; the mirror phase drives
// Wb toward a scalar multiple of W' using uncorrelated noise probes.
template <typename S>
UpdateBatch<S> wm_learn_deltas(const TwoStreamNetwork<S>& net, const ActivationTrace<S>& trace,
                               const RuleConfig& cfg) {
    if (!trace.feedback_done) throw StateError("wm_learn_deltas requires a completed feedback pass");
    const int L = net.depth();
    const S inv_b = S(1) / S(trace.batch());
    auto u = UpdateBatch<S>::zeros_like(net);
    for (int k = 0; k < L - 1; ++k) {
        u.dW[k].noalias() = S(cfg.eta_w) * inv_b * (trace.h_bar[k + 1] * trace.h[k].transpose());
        u.dW[k] -= S(cfg.gamma) * net.layers[k].W;
    }
    return u;
}

template <typename S>
UpdateBatch<S> wm_mirror_phase(const TwoStreamNetwork<S>& net, const RuleConfig& cfg,
                               std::uint64_t noise_seed) {
    if (cfg.mirror_noise_std <= 0) throw ConfigError("mirror_noise_std must be positive");
    const int L = net.depth();
    auto u = UpdateBatch<S>::zeros_like(net);
    for (int k = 0; k < L - 1; ++k) {
        GaussianRng rng(split_seed(noise_seed, std::uint64_t(k)));
        const int b = cfg.mirror_batch;
        Matrix<S> xi(net.layers[k].W.cols(), b);
        rng.fill_gaussian(xi, cfg.mirror_noise_std);
        Matrix<S> wxi;
        wxi.noalias() = net.layers[k].W * xi;
        // d(Wb)' = mirror_eta <(W xi) xi'> - gamma (Wb)'
        Matrix<S> incT;
        incT.noalias() = S(cfg.mirror_eta) * (wxi * xi.transpose()) / S(b);
        u.dWb[k] = incT.transpose() - S(cfg.gamma) * net.layers[k].Wb;
    }
    return u;
}

// In-place application with a post-update finiteness check.
template <typename S>
void apply(TwoStreamNetwork<S>& net, const UpdateBatch<S>& u) {
    const int L = net.depth();
    auto check = [](const Matrix<S>& m, const char* name, int idx) {
        if (!m.allFinite())
            throw DivergenceError(std::string(name) + "[" + std::to_string(idx) +
                                  "] is not finite after update");
    };
    for (int k = 0; k < L - 1; ++k) {
        net.layers[k].W += u.dW[k];
        net.layers[k].Wb += u.dWb[k];
        check(net.layers[k].W, "W", k);
        check(net.layers[k].Wb, "Wb", k);
    }
    for (int j = 0; j < L; ++j) {
        net.V[j] += u.dV[j];
        net.Vb[j] += u.dVb[j];
        check(net.V[j], "V", j);
        check(net.Vb[j], "Vb", j);
    }
}

}  // namespace sal
