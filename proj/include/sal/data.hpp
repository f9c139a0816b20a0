#pragma once

#include "sal/common.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace sal {

// Flattened examples, one row per example, pixels already in [0, 1].
struct LabeledDataset {
    Matd examples;              // n x d
    std::vector<int> labels;    // length n
    int num_classes = 0;
    std::string name;

    Eigen::Index size() const { return examples.rows(); }
    Eigen::Index dim() const { return examples.cols(); }

    void validate() const {
        if (size() < 1) throw FormatError(name + ": empty dataset");
        if (num_classes < 1) throw FormatError(name + ": no classes");
        if (Eigen::Index(labels.size()) != size())
            throw FormatError(name + ": label count mismatch");
        for (int l : labels)
            if (l < 0 || l >= num_classes)
                throw FormatError(name + ": label out of range");
    }
};

struct BatchPlan {
    int batch_size = 256;
    std::uint64_t shuffle_seed = 0;
    bool drop_last = true;
};

namespace detail {

inline std::vector<unsigned char> read_file_maybe_gz(const std::string& path) {
    if (!std::filesystem::exists(path)) throw FormatError("no such file: " + path);
    // gzopen transparently reads both plain and gzip files
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw FormatError("cannot open: " + path);
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw FormatError("decompression failed: " + path);
    return out;
}

inline std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

}  // namespace detail

// IDX format: big-endian magic 0x00000803 (images, u8, 3 dims) or
// 0x00000801 (labels, u8, 1 dim). Optionally gzip-compressed on disk.
inline LabeledDataset load_idx(const std::string& path_images, const std::string& path_labels) {
    const auto img = detail::read_file_maybe_gz(path_images);
    const auto lab = detail::read_file_maybe_gz(path_labels);
    if (img.size() < 16) throw FormatError("image file too short: " + path_images);
    if (lab.size() < 8) throw FormatError("label file too short: " + path_labels);
    if (detail::be32(img.data()) != 0x00000803u)
        throw FormatError("bad image magic in " + path_images);
    if (detail::be32(lab.data()) != 0x00000801u)
        throw FormatError("bad label magic in " + path_labels);
    const std::size_t n = detail::be32(img.data() + 4);
    const std::size_t rows = detail::be32(img.data() + 8);
    const std::size_t cols = detail::be32(img.data() + 12);
    const std::size_t d = rows * cols;
    if (img.size() != 16 + n * d) throw FormatError("image payload length mismatch: " + path_images);
    const std::size_t nl = detail::be32(lab.data() + 4);
    if (lab.size() != 8 + nl) throw FormatError("label payload length mismatch: " + path_labels);
    if (n != nl) throw FormatError("image/label count mismatch");

    LabeledDataset ds;
    ds.name = std::filesystem::path(path_images).filename().string();
    ds.examples.resize(Eigen::Index(n), Eigen::Index(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            ds.examples(Eigen::Index(i), Eigen::Index(j)) = img[16 + i * d + j] / 255.0;
    ds.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes.
inline LabeledDataset load_cifar10_file(const std::string& path) {
    const auto raw = detail::read_file_maybe_gz(path);
    constexpr std::size_t rec = 3073;
    if (raw.empty() || raw.size() % rec != 0)
        throw FormatError("file size is not a multiple of 3073: " + path);
    const std::size_t n = raw.size() / rec;
    LabeledDataset ds;
    ds.name = std::filesystem::path(path).filename().string();
    ds.num_classes = 10;
    ds.examples.resize(Eigen::Index(n), 3072);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = raw[i * rec];
        for (std::size_t j = 0; j < 3072; ++j)
            ds.examples(Eigen::Index(i), Eigen::Index(j)) = raw[i * rec + 1 + j] / 255.0;
    }
    ds.validate();
    return ds;
}

inline std::pair<LabeledDataset, LabeledDataset> load_cifar10_binary(const std::string& dir) {
    LabeledDataset train;
    train.name = "cifar10-train";
    train.num_classes = 10;
    std::vector<LabeledDataset> parts;
    for (int b = 1; b <= 5; ++b)
        parts.push_back(load_cifar10_file(dir + "/data_batch_" + std::to_string(b) + ".bin"));
    Eigen::Index total = 0;
    for (const auto& p : parts) total += p.size();
    train.examples.resize(total, 3072);
    train.labels.reserve(std::size_t(total));
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        train.examples.middleRows(off, p.size()) = p.examples;
        train.labels.insert(train.labels.end(), p.labels.begin(), p.labels.end());
        off += p.size();
    }
    train.validate();
    auto test = load_cifar10_file(dir + "/test_batch.bin");
    test.name = "cifar10-test";
    return {std::move(train), std::move(test)};
}

// Generic import: manifest JSON naming a flat little-endian f32 example
// file and a u32 label file.
inline LabeledDataset load_raw_tensor(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw FormatError("cannot open manifest: " + manifest_path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad manifest json: ") + e.what());
    }
    const auto base = std::filesystem::path(manifest_path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    const std::string ex_path = resolve(j.at("examples_path").get<std::string>());
    const std::string lb_path = resolve(j.at("labels_path").get<std::string>());
    const std::size_t n = j.at("n").get<std::size_t>();
    const std::size_t d = j.at("d").get<std::size_t>();
    const int num_classes = j.at("num_classes").get<int>();

    std::ifstream ef(ex_path, std::ios::binary | std::ios::ate);
    if (!ef) throw FormatError("cannot open examples file: " + ex_path);
    if (std::size_t(ef.tellg()) != n * d * 4)
        throw FormatError("examples file size mismatch vs manifest dims");
    ef.seekg(0);
    std::vector<float> ex(n * d);
    ef.read(reinterpret_cast<char*>(ex.data()), std::streamsize(n * d * 4));
    if (!ef) throw FormatError("short read: " + ex_path);

    std::ifstream lf(lb_path, std::ios::binary | std::ios::ate);
    if (!lf) throw FormatError("cannot open labels file: " + lb_path);
    if (std::size_t(lf.tellg()) != n * 4) throw FormatError("labels file size mismatch");
    lf.seekg(0);
    std::vector<std::uint32_t> lb(n);
    lf.read(reinterpret_cast<char*>(lb.data()), std::streamsize(n * 4));
    if (!lf) throw FormatError("short read: " + lb_path);

    LabeledDataset ds;
    ds.name = j.value("name", std::filesystem::path(manifest_path).stem().string());
    ds.num_classes = num_classes;
    ds.examples.resize(Eigen::Index(n), Eigen::Index(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k)
            ds.examples(Eigen::Index(i), Eigen::Index(k)) = ex[i * d + k];
    ds.labels.assign(lb.begin(), lb.end());
    ds.validate();
    return ds;
}

inline Matd one_hot(const std::vector<int>& labels, int num_classes) {
    Matd y = Matd::Zero(Eigen::Index(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw FormatError("label out of range in one_hot");
        y(Eigen::Index(i), labels[i]) = 1.0;
    }
    return y;
}

// Deterministic per-(seed, epoch) permutation into batch index lists.
inline std::vector<std::vector<Eigen::Index>> batch_indices(Eigen::Index n, const BatchPlan& plan,
                                                            int epoch) {
    if (plan.batch_size < 1 || Eigen::Index(plan.batch_size) > n)
        throw ConfigError("batch_size must be in [1, n]");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 eng(split_seed(plan.shuffle_seed, std::uint64_t(epoch)));
    std::shuffle(idx.begin(), idx.end(), eng);
    std::vector<std::vector<Eigen::Index>> out;
    for (Eigen::Index start = 0; start < n; start += plan.batch_size) {
        const Eigen::Index end = std::min(n, start + plan.batch_size);
        if (plan.drop_last && end - start < plan.batch_size) break;
        out.emplace_back(idx.begin() + start, idx.begin() + end);
    }
    return out;
}

// Column-major batch extraction: x is d x b, y is c x b.
template <typename S = double>
void gather_batch(const LabeledDataset& ds, const Matd& targets,
                  const std::vector<Eigen::Index>& idx, Matrix<S>& x, Matrix<S>& y) {
    x.resize(ds.dim(), Eigen::Index(idx.size()));
    y.resize(targets.cols(), Eigen::Index(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        x.col(Eigen::Index(i)) = ds.examples.row(idx[i]).transpose().cast<S>();
        y.col(Eigen::Index(i)) = targets.row(idx[i]).transpose().cast<S>();
    }
}

}  // namespace sal
