#pragma once

#include "sal/common.hpp"
#include "sal/rng.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace sal {

enum class LossKind { Mse, SoftmaxCrossEntropy };

// Gate applied in the downstream (feedback) pass.
enum class Gate { Identity, ReluOfVh, ReluOfWbarHbar };

enum class InitScale { FanInGaussian, Constant };

struct LayerDims {
    int d_up = 0;    // upstream width
    int d_down = 0;  // downstream width
};

// The four-matrix synaptic motif between layer k and layer k+1.
// W:  d_up[k+1] x d_up[k]      upstream -> upstream
// Wb: d_down[k] x d_down[k+1]  downstream -> downstream
template <typename S>
struct TwoStreamLayer {
    Matrix<S> W;
    Matrix<S> Wb;
};

// Full stack. Couplings V (d_down x d_up) and Vb (d_up x d_down) are
// attached per layer; Vb at the output layer is the identity and is
// never updated.
template <typename S>
struct TwoStreamNetwork {
    std::vector<LayerDims> dims;        // length L
    std::vector<TwoStreamLayer<S>> layers;  // length L-1
    std::vector<Matrix<S>> V;           // length L
    std::vector<Matrix<S>> Vb;          // length L
    LossKind loss = LossKind::Mse;
    Gate gate = Gate::Identity;

    int depth() const { return static_cast<int>(dims.size()); }
    int input_dim() const { return dims.front().d_up; }
    int output_dim() const { return dims.back().d_up; }
};

inline void validate_dims(const std::vector<LayerDims>& dims) {
    if (dims.size() < 2) throw ConfigError("network needs at least 2 layers");
    for (const auto& d : dims)
        if (d.d_up < 1 || d.d_down < 1) throw ConfigError("zero-width layer");
    if (dims.back().d_down != dims.back().d_up)
        throw ConfigError("output layer must have d_down == d_up");
}

template <typename S = double>
TwoStreamNetwork<S> init_network(const std::vector<LayerDims>& dims, std::uint64_t seed,
                                 InitScale scale = InitScale::FanInGaussian,
                                 double constant_sigma = 0.0,
                                 LossKind loss = LossKind::Mse, Gate gate = Gate::Identity) {
    validate_dims(dims);
    const int L = static_cast<int>(dims.size());
    TwoStreamNetwork<S> net;
    net.dims = dims;
    net.loss = loss;
    net.gate = gate;
    net.layers.resize(L - 1);
    net.V.resize(L);
    net.Vb.resize(L);

    auto sigma = [&](int fan_in) {
        return scale == InitScale::FanInGaussian ? 1.0 / std::sqrt(double(fan_in))
                                                 : constant_sigma;
    };
    for (int k = 0; k < L - 1; ++k) {
        GaussianRng rw(split_seed(seed, 4 * k + 0));
        GaussianRng rwb(split_seed(seed, 4 * k + 1));
        auto& ly = net.layers[k];
        ly.W.resize(dims[k + 1].d_up, dims[k].d_up);
        rw.fill_gaussian(ly.W, sigma(dims[k].d_up));
        ly.Wb.resize(dims[k].d_down, dims[k + 1].d_down);
        rwb.fill_gaussian(ly.Wb, sigma(dims[k + 1].d_down));
    }
    for (int j = 0; j < L; ++j) {
        GaussianRng rv(split_seed(seed, 4 * j + 2));
        GaussianRng rvb(split_seed(seed, 4 * j + 3));
        net.V[j].resize(dims[j].d_down, dims[j].d_up);
        rv.fill_gaussian(net.V[j], sigma(dims[j].d_up));
        net.Vb[j].resize(dims[j].d_up, dims[j].d_down);
        rvb.fill_gaussian(net.Vb[j], sigma(dims[j].d_down));
    }
    net.Vb[L - 1] = Matrix<S>::Identity(dims[L - 1].d_up, dims[L - 1].d_down);
    return net;
}

template <typename S>
bool all_finite(const Matrix<S>& m) {
    return m.allFinite();
}

// ---------------------------------------------------------------------------
// Checkpoint format: "TSNW" magic, version u32, layer count u32, then each
// matrix as rows u32, cols u32, row-major f64 little-endian. Matrix order:
// W[0..L-2], Wb[0..L-2], V[0..L-1], Vb[0..L-1].
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("truncated checkpoint");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

template <typename S>
void write_matrix(std::ostream& os, const Matrix<S>& m) {
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double v = static_cast<double>(m(r, c));
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            unsigned char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
            os.write(reinterpret_cast<const char*>(b), 8);
        }
}

template <typename S>
Matrix<S> read_matrix(std::istream& is) {
    const auto rows = read_u32(is);
    const auto cols = read_u32(is);
    Matrix<S> m(rows, cols);
    std::vector<unsigned char> buf(std::size_t(rows) * cols * 8);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw FormatError("truncated checkpoint matrix");
    std::size_t off = 0;
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) {
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= std::uint64_t(buf[off + i]) << (8 * i);
            off += 8;
            double v;
            std::memcpy(&v, &bits, 8);
            m(r, c) = static_cast<S>(v);
        }
    return m;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const TwoStreamNetwork<S>& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
    os.write("TSNW", 4);
    detail::write_u32(os, 1u);
    detail::write_u32(os, static_cast<std::uint32_t>(net.depth()));
    for (const auto& ly : net.layers) detail::write_matrix(os, ly.W);
    for (const auto& ly : net.layers) detail::write_matrix(os, ly.Wb);
    for (const auto& v : net.V) detail::write_matrix(os, v);
    for (const auto& vb : net.Vb) detail::write_matrix(os, vb);
    if (!os) throw FormatError("checkpoint write failed: " + path);
}

template <typename S = double>
TwoStreamNetwork<S> load_checkpoint(const std::string& path,
                                    LossKind loss = LossKind::Mse,
                                    Gate gate = Gate::Identity) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "TSNW", 4) != 0) throw FormatError("bad checkpoint magic");
    const auto version = detail::read_u32(is);
    if (version != 1) throw FormatError("unsupported checkpoint version");
    const int L = static_cast<int>(detail::read_u32(is));
    if (L < 2) throw FormatError("bad layer count");
    TwoStreamNetwork<S> net;
    net.loss = loss;
    net.gate = gate;
    net.layers.resize(L - 1);
    net.V.resize(L);
    net.Vb.resize(L);
    for (int k = 0; k < L - 1; ++k) net.layers[k].W = detail::read_matrix<S>(is);
    for (int k = 0; k < L - 1; ++k) net.layers[k].Wb = detail::read_matrix<S>(is);
    for (int j = 0; j < L; ++j) net.V[j] = detail::read_matrix<S>(is);
    for (int j = 0; j < L; ++j) net.Vb[j] = detail::read_matrix<S>(is);
    net.dims.resize(L);
    for (int j = 0; j < L; ++j) {
        net.dims[j].d_up = static_cast<int>(net.V[j].cols());
        net.dims[j].d_down = static_cast<int>(net.V[j].rows());
    }
    validate_dims(net.dims);
    return net;
}

}  // namespace sal
