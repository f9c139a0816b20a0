#pragma once

#include "sal/network.hpp"

#include <vector>

namespace sal {

// Per-batch activations. Columns are examples: h[j] is d_up[j] x batch,
// h_bar[j] is d_down[j] x batch. preact[k] holds W[k] * h[k] for the
// weight slot k (used for the upstream ReLU mask in exact backprop).
template <typename S>
struct ActivationTrace {
    std::vector<Matrix<S>> h;
    std::vector<Matrix<S>> preact;
    std::vector<Matrix<S>> h_bar;
    bool forward_done = false;
    bool feedback_done = false;

    Eigen::Index batch() const { return h.empty() ? 0 : h.front().cols(); }
};

// Upstream pass: hidden layers are ReLU, the output layer is linear.
template <typename S>
Matrix<S> forward(const TwoStreamNetwork<S>& net, const Matrix<S>& x, ActivationTrace<S>& trace) {
    const int L = net.depth();
    if (x.rows() != net.input_dim())
        throw DimensionError("input has " + std::to_string(x.rows()) + " rows, expected " +
                             std::to_string(net.input_dim()));
    trace.h.assign(std::size_t(L), Matrix<S>());
    trace.preact.assign(std::size_t(L - 1), Matrix<S>());
    trace.h_bar.assign(std::size_t(L), Matrix<S>());
    trace.forward_done = false;
    trace.feedback_done = false;

    trace.h[0] = x;
    for (int k = 0; k < L - 1; ++k) {
        trace.preact[k].noalias() = net.layers[k].W * trace.h[k];
        if (k < L - 2)
            trace.h[k + 1] = trace.preact[k].cwiseMax(S(0));
        else
            trace.h[k + 1] = trace.preact[k];
    }
    trace.forward_done = true;
    return trace.h[L - 1];
}

template <typename S>
Matrix<S> forward(const TwoStreamNetwork<S>& net, const Matrix<S>& x) {
    ActivationTrace<S> t;
    return forward(net, x, t);
}

// h_bar^L = -grad of the loss at the output.
template <typename S>
Matrix<S> error_signal(const Matrix<S>& y_hat, const Matrix<S>& y, LossKind loss) {
    if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols())
        throw DimensionError("error_signal: prediction/target shape mismatch");
    switch (loss) {
        case LossKind::Mse:
            return S(2) * (y - y_hat);
        case LossKind::SoftmaxCrossEntropy: {
            Matrix<S> sm = y_hat;
            for (Eigen::Index c = 0; c < sm.cols(); ++c) {
                auto col = sm.col(c);
                col.array() -= col.maxCoeff();
                col = col.array().exp();
                col /= col.sum();
            }
            return y - sm;
        }
    }
    throw ConfigError("unknown loss kind");
}

template <typename S>
S loss_value(const Matrix<S>& y_hat, const Matrix<S>& y, LossKind loss) {
    if (loss == LossKind::Mse) return (y - y_hat).squaredNorm();
    // softmax cross entropy, summed over the batch
    S total = 0;
    for (Eigen::Index c = 0; c < y_hat.cols(); ++c) {
        auto col = y_hat.col(c);
        const S mx = col.maxCoeff();
        const S lse = std::log((col.array() - mx).exp().sum()) + mx;
        total += lse - y.col(c).dot(col);
    }
    return total;
}

// Downstream pass, h_bar^l = G .* (Wb^l h_bar^{l+1}), top layer seeded
// with the error signal.
template <typename S>
void feedback(const TwoStreamNetwork<S>& net, ActivationTrace<S>& trace, const Matrix<S>& h_bar_top) {
    if (!trace.forward_done) throw StateError("feedback requires a completed forward pass");
    const int L = net.depth();
    if (h_bar_top.rows() != net.dims.back().d_down)
        throw DimensionError("error signal width mismatch");
    trace.h_bar[L - 1] = h_bar_top;
    for (int k = L - 2; k >= 0; --k) {
        Matrix<S> z;
        z.noalias() = net.layers[k].Wb * trace.h_bar[k + 1];
        switch (net.gate) {
            case Gate::Identity:
                break;
            case Gate::ReluOfVh: {
                Matrix<S> g;
                g.noalias() = net.V[k] * trace.h[k];
                z = (g.array() > S(0)).select(z, S(0));
                break;
            }
            case Gate::ReluOfWbarHbar:
                z = z.cwiseMax(S(0));
                break;
        }
        trace.h_bar[k] = std::move(z);
    }
    trace.feedback_done = true;
}

}  // namespace sal
