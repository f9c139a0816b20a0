#pragma once

#include "sal/analysis.hpp"
#include "sal/data.hpp"
#include "sal/verify.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace sal {

inline std::string rule_name(Rule r) {
    switch (r) {
        case Rule::Sal: return "sal";
        case Rule::Sgd: return "sgd";
        case Rule::Fa: return "fa";
        case Rule::Wm: return "wm";
        case Rule::Kp: return "kp";
    }
    return "?";
}

inline Rule rule_from_name(const std::string& s) {
    if (s == "sal") return Rule::Sal;
    if (s == "sgd") return Rule::Sgd;
    if (s == "fa") return Rule::Fa;
    if (s == "wm") return Rule::Wm;
    if (s == "kp") return Rule::Kp;
    throw ConfigError("unknown rule: " + s);
}

inline std::string gate_name(Gate g) {
    switch (g) {
        case Gate::Identity: return "identity";
        case Gate::ReluOfVh: return "relu_of_vh";
        case Gate::ReluOfWbarHbar: return "relu_of_wbar_hbar";
    }
    return "?";
}

inline Gate gate_from_name(const std::string& s) {
    if (s == "identity") return Gate::Identity;
    if (s == "relu_of_vh") return Gate::ReluOfVh;
    if (s == "relu_of_wbar_hbar") return Gate::ReluOfWbarHbar;
    throw ConfigError("unknown gate: " + s);
}

struct ExperimentConfig {
    std::string dataset = "mnist";
    std::string data_dir;
    // architecture: total layer count including input and output
    int depth = 5;
    int hidden_width = 200;
    double down_multiplier = 1.0;  // r: downstream hidden width = round(r * width)
    LossKind loss = LossKind::SoftmaxCrossEntropy;
    RuleConfig rule;
    int epochs = 20;
    BatchPlan batch;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::string out_dir = "out";
    double wbar_init_scale = 1.0;       // multiplier on the fan-in init of Wb
    std::string coupling_init = "gaussian";  // "gaussian" | "identity"
    // shift/scale inputs by the global train-set mean and stddev at batch
    // time; the stored dataset keeps its [0,1] pixel range
    bool standardize = false;
    int mirror_every = 1;               // WM: mirror phase every N batches
    int threads = 1;

    void validate() const {
        if (depth < 2) throw ConfigError("depth must be >= 2");
        if (hidden_width < 1) throw ConfigError("hidden_width must be >= 1");
        if (down_multiplier <= 0) throw ConfigError("down multiplier must be > 0");
        if (int(std::lround(down_multiplier * hidden_width)) < 1)
            throw ConfigError("down multiplier yields zero-width downstream layer");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (seeds.empty()) throw ConfigError("need at least one seed");
        if (coupling_init != "gaussian" && coupling_init != "identity")
            throw ConfigError("coupling_init must be 'gaussian' or 'identity'");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        rule.validate();
    }
};

// Per-rule tuned defaults (MNIST-scale benchmarks). Applied only when the
// incoming config leaves eta_w at zero, so explicit settings always win.
inline void apply_rule_defaults(ExperimentConfig& cfg) {
    auto& r = cfg.rule;
    if (r.eta_w != 0.0) return;
    switch (r.rule) {
        case Rule::Sal:
            // sweep winner (ratio-fixed mode, standardized inputs): fast W/Wb,
            // frozen couplings, aligned identity start, Wb self-assembles from
            // zero. Higher rates diverge on some seeds.
            r.eta_w = 0.3;
            r.eta_v = 0.0;
            r.eta_wbar = 0.3;
            r.eta_vbar = 0.0;
            r.gamma = 0.0;
            r.gate = Gate::ReluOfVh;
            cfg.wbar_init_scale = 0.0;
            cfg.coupling_init = "identity";
            break;
        case Rule::Sgd:
            r.eta_w = 0.3;
            r.gamma = 0.0;
            r.mask = {true, false, false, false};
            break;
        case Rule::Fa:
            r.eta_w = 0.01;
            r.gamma = 0.0;
            r.mask = {true, false, false, false};
            break;
        case Rule::Wm:
            r.eta_w = 0.1;
            r.gamma = 1e-4;
            r.mask = {true, false, false, false};
            r.mirror_eta = 0.01;
            r.mirror_noise_std = 1.0;
            break;
        case Rule::Kp:
            r.eta_w = 0.1;
            r.gamma = 1e-4;
            r.mask = {true, false, true, false};
            break;
    }
}

inline void to_json(nlohmann::json& j, const PlasticityMask& m) {
    j = {{"w", m.w}, {"v", m.v}, {"wbar", m.wbar}, {"vbar", m.vbar}};
}
inline void from_json(const nlohmann::json& j, PlasticityMask& m) {
    m.w = j.value("w", true);
    m.v = j.value("v", true);
    m.wbar = j.value("wbar", true);
    m.vbar = j.value("vbar", true);
}

inline void to_json(nlohmann::json& j, const RuleConfig& c) {
    j = {{"rule", rule_name(c.rule)},
         {"eta_w", c.eta_w},
         {"eta_v", c.eta_v},
         {"eta_wbar", c.eta_wbar},
         {"eta_vbar", c.eta_vbar},
         {"gamma", c.gamma},
         {"mask", c.mask},
         {"gate", gate_name(c.gate)},
         {"mirror_eta", c.mirror_eta},
         {"mirror_noise_std", c.mirror_noise_std},
         {"mirror_batch", c.mirror_batch}};
}
inline void from_json(const nlohmann::json& j, RuleConfig& c) {
    c.rule = rule_from_name(j.value("rule", std::string("sal")));
    c.eta_w = j.value("eta_w", c.eta_w);
    c.eta_v = j.value("eta_v", c.eta_v);
    c.eta_wbar = j.value("eta_wbar", c.eta_wbar);
    c.eta_vbar = j.value("eta_vbar", c.eta_vbar);
    c.gamma = j.value("gamma", c.gamma);
    if (j.contains("mask")) c.mask = j.at("mask").get<PlasticityMask>();
    c.gate = gate_from_name(j.value("gate", std::string("identity")));
    c.mirror_eta = j.value("mirror_eta", c.mirror_eta);
    c.mirror_noise_std = j.value("mirror_noise_std", c.mirror_noise_std);
    c.mirror_batch = j.value("mirror_batch", c.mirror_batch);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"dataset", c.dataset},
         {"data_dir", c.data_dir},
         {"depth", c.depth},
         {"hidden_width", c.hidden_width},
         {"down_multiplier", c.down_multiplier},
         {"loss", c.loss == LossKind::Mse ? "mse" : "softmax_ce"},
         {"rule", c.rule},
         {"epochs", c.epochs},
         {"batch_size", c.batch.batch_size},
         {"shuffle_seed", c.batch.shuffle_seed},
         {"seeds", c.seeds},
         {"out_dir", c.out_dir},
         {"wbar_init_scale", c.wbar_init_scale},
         {"coupling_init", c.coupling_init},
         {"standardize", c.standardize},
         {"mirror_every", c.mirror_every},
         {"threads", c.threads}};
}
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c.dataset = j.value("dataset", c.dataset);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.depth = j.value("depth", c.depth);
    c.hidden_width = j.value("hidden_width", c.hidden_width);
    c.down_multiplier = j.value("down_multiplier", c.down_multiplier);
    const std::string loss = j.value("loss", std::string("softmax_ce"));
    if (loss == "mse")
        c.loss = LossKind::Mse;
    else if (loss == "softmax_ce")
        c.loss = LossKind::SoftmaxCrossEntropy;
    else
        throw ConfigError("unknown loss: " + loss);
    if (j.contains("rule")) c.rule = j.at("rule").get<RuleConfig>();
    c.epochs = j.value("epochs", c.epochs);
    c.batch.batch_size = j.value("batch_size", c.batch.batch_size);
    c.batch.shuffle_seed = j.value("shuffle_seed", c.batch.shuffle_seed);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out_dir = j.value("out_dir", c.out_dir);
    c.wbar_init_scale = j.value("wbar_init_scale", c.wbar_init_scale);
    c.coupling_init = j.value("coupling_init", c.coupling_init);
    c.standardize = j.value("standardize", c.standardize);
    c.mirror_every = j.value("mirror_every", c.mirror_every);
    c.threads = j.value("threads", c.threads);
}

// FNV-1a over the canonical JSON form; names every artifact a run emits.
inline std::string config_hash(const ExperimentConfig& cfg) {
    nlohmann::json j = cfg;
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    std::vector<double> eff_rank_w;       // per weight layer
    std::vector<double> align_err;        // per coupling layer (below output)
    std::vector<double> min_eig_h;        // per weight layer (H of Vb^{k+1})
};

struct RunRecord {
    ExperimentConfig config;
    std::uint64_t seed = 0;
    std::vector<EpochRow> rows;
    bool diverged = false;
    std::string divergence_note;
    double final_test_acc = 0.0;
    double wall_seconds = 0.0;
};

template <typename S>
std::vector<LayerDims> make_dims(const ExperimentConfig& cfg, int input_dim, int num_classes) {
    const int d_hidden = cfg.hidden_width;
    const int d_down = int(std::lround(cfg.down_multiplier * cfg.hidden_width));
    if (d_down < 1) throw ConfigError("down multiplier yields zero-width downstream layer");
    std::vector<LayerDims> dims(static_cast<std::size_t>(cfg.depth));
    dims.front() = {input_dim, d_down};
    for (int j = 1; j + 1 < cfg.depth; ++j) dims[std::size_t(j)] = {d_hidden, d_down};
    dims.back() = {num_classes, num_classes};
    return dims;
}

template <typename S>
double accuracy(const TwoStreamNetwork<S>& net, const LabeledDataset& ds, int eval_batch = 1000,
                double shift = 0.0, double scale = 1.0) {
    Eigen::Index correct = 0;
    const Eigen::Index n = ds.size();
    Matrix<S> x;
    for (Eigen::Index start = 0; start < n; start += eval_batch) {
        const Eigen::Index b = std::min<Eigen::Index>(eval_batch, n - start);
        x.resize(ds.dim(), b);
        for (Eigen::Index i = 0; i < b; ++i)
            x.col(i) = ds.examples.row(start + i).transpose().template cast<S>();
        if (shift != 0.0 || scale != 1.0)
            x = ((x.array() - S(shift)) / S(scale)).matrix();
        Matrix<S> y_hat = forward(net, x);
        for (Eigen::Index i = 0; i < b; ++i) {
            Eigen::Index pred;
            y_hat.col(i).maxCoeff(&pred);
            if (int(pred) == ds.labels[std::size_t(start + i)]) ++correct;
        }
    }
    return 100.0 * double(correct) / double(n);
}

namespace detail {

template <typename S>
void setup_baseline_couplings(TwoStreamNetwork<S>& net, Rule rule) {
    // SGD/FA/WM/KP live in the square reduced circuit: V = Vb = I frozen,
    // and the downstream gate carries the upstream ReLU mask.
    if (rule == Rule::Sal) return;
    const int L = net.depth();
    for (int j = 0; j < L; ++j) {
        if (net.dims[j].d_up != net.dims[j].d_down)
            throw ConfigError("baseline rules require d_down == d_up");
        net.V[j] = Matrix<S>::Identity(net.dims[j].d_down, net.dims[j].d_up);
        net.Vb[j] = Matrix<S>::Identity(net.dims[j].d_up, net.dims[j].d_down);
    }
    net.gate = Gate::ReluOfVh;
    if (rule == Rule::Sgd) {
        // exact transpose feedback
        for (auto& ly : net.layers) ly.Wb = ly.W.transpose();
    }
}

template <typename S>
UpdateBatch<S> rule_deltas(const TwoStreamNetwork<S>& net, const ActivationTrace<S>& trace,
                           const Matrix<S>& y, const RuleConfig& cfg) {
    switch (cfg.rule) {
        case Rule::Sal: return sal_deltas(net, trace, cfg);
        case Rule::Sgd: return sgd_deltas(net, trace, y, cfg);
        case Rule::Fa: return fa_deltas(net, trace, cfg);
        case Rule::Wm: return wm_learn_deltas(net, trace, cfg);
        case Rule::Kp: return kp_deltas(net, trace, cfg);
    }
    throw ConfigError("unknown rule");
}

}  // namespace detail

// One seeded training run. Deterministic: (config, seed) fixes the
// initial weights, the shuffle order and therefore every update.
template <typename S = double>
RunRecord train_one(const ExperimentConfig& cfg, std::uint64_t seed, const LabeledDataset& train,
                    const LabeledDataset& test, bool with_spectra_rows = true) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config = cfg;
    rec.seed = seed;

    auto dims = make_dims<S>(cfg, int(train.dim()), train.num_classes);
    if (cfg.rule.rule != Rule::Sal)
        for (auto& d : dims) d.d_down = d.d_up;  // baselines live in the square circuit
    auto net = init_network<S>(dims, seed, InitScale::FanInGaussian, 0.0, cfg.loss,
                               cfg.rule.gate);
    if (cfg.wbar_init_scale != 1.0)
        for (auto& ly : net.layers) ly.Wb *= S(cfg.wbar_init_scale);
    if (cfg.coupling_init == "identity") {
        // start the couplings mutually transposed; the decay term keeps
        // them aligned while the Hebbian drives reshape them
        for (int j = 0; j < net.depth(); ++j) {
            net.V[std::size_t(j)] =
                Matrix<S>::Identity(net.dims[std::size_t(j)].d_down,
                                    net.dims[std::size_t(j)].d_up);
            net.Vb[std::size_t(j)] = net.V[std::size_t(j)].transpose();
        }
    }
    detail::setup_baseline_couplings(net, cfg.rule.rule);

    double in_shift = 0.0, in_scale = 1.0;
    if (cfg.standardize) {
        in_shift = train.examples.mean();
        in_scale = std::sqrt((train.examples.array() - in_shift).square().mean());
        if (in_scale <= 0) throw ConfigError("standardize: constant input data");
    }

    const Matd targets = one_hot(train.labels, train.num_classes);
    BatchPlan plan = cfg.batch;
    plan.shuffle_seed = split_seed(plan.shuffle_seed, seed);

    Matrix<S> x, y;
    ActivationTrace<S> tr;
    long mirror_counter = 0;
    for (int ep = 0; ep < cfg.epochs; ++ep) {
        double loss_sum = 0.0;
        Eigen::Index seen = 0, correct = 0;
        try {
            for (const auto& idx : batch_indices(train.size(), plan, ep)) {
                gather_batch(train, targets, idx, x, y);
                if (cfg.standardize)
                    x = ((x.array() - S(in_shift)) / S(in_scale)).matrix();
                forward(net, x, tr);
                const auto& y_hat = tr.h[std::size_t(net.depth() - 1)];
                loss_sum += double(loss_value(y_hat, y, net.loss));
                for (Eigen::Index i = 0; i < y_hat.cols(); ++i) {
                    Eigen::Index pred;
                    y_hat.col(i).maxCoeff(&pred);
                    if (int(pred) == train.labels[std::size_t(idx[std::size_t(i)])]) ++correct;
                }
                seen += y_hat.cols();
                if (cfg.rule.rule != Rule::Sgd)
                    feedback(net, tr, error_signal(y_hat, y, net.loss));
                auto u = detail::rule_deltas(net, tr, y, cfg.rule);
                if (cfg.rule.rule == Rule::Wm && cfg.mirror_every > 0 &&
                    (mirror_counter++ % cfg.mirror_every == 0)) {
                    u += wm_mirror_phase(net, cfg.rule,
                                         split_seed(seed, 0xA11CE000ULL + std::uint64_t(mirror_counter)));
                }
                apply(net, u);
            }
        } catch (const DivergenceError& e) {
            rec.diverged = true;
            rec.divergence_note = e.what();
            break;
        }
        EpochRow row;
        row.epoch = ep + 1;
        row.train_loss = loss_sum / double(std::max<Eigen::Index>(1, seen));
        row.train_acc = 100.0 * double(correct) / double(std::max<Eigen::Index>(1, seen));
        row.test_acc = accuracy(net, test, 1000, in_shift, in_scale);
        if (with_spectra_rows) {
            for (int k = 0; k < net.depth() - 1; ++k) {
                row.eff_rank_w.push_back(effective_rank(net.layers[std::size_t(k)].W));
                row.min_eig_h.push_back(h_matrix(net, k + 1).min_eigenvalue);
            }
            for (int j = 0; j < net.depth() - 1; ++j)
                row.align_err.push_back(alignment_error(net, j));
        }
        rec.rows.push_back(std::move(row));
    }
    if (!rec.rows.empty()) rec.final_test_acc = rec.rows.back().test_acc;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        const std::string tag = config_hash(cfg) + "_seed" + std::to_string(seed);
        save_checkpoint(net, cfg.out_dir + "/weights_" + tag + ".tsnw");
    }
    return rec;
}

inline void write_metrics_csv(const std::string& path, const std::vector<RunRecord>& recs) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "config_hash,rule,seed,epoch,train_loss,train_acc,test_acc,"
          "eff_rank_w,align_err,min_eig_h\n";
    auto join = [](const std::vector<double>& v) {
        std::ostringstream ss;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) ss << ';';
            ss << std::setprecision(10) << v[i];
        }
        return ss.str();
    };
    for (const auto& rec : recs) {
        const std::string hash = config_hash(rec.config);
        for (const auto& r : rec.rows) {
            os << hash << ',' << rule_name(rec.config.rule.rule) << ',' << rec.seed << ','
               << r.epoch << ',' << std::setprecision(10) << r.train_loss << ',' << r.train_acc
               << ',' << r.test_acc << ',' << join(r.eff_rank_w) << ',' << join(r.align_err)
               << ',' << join(r.min_eig_h) << '\n';
            os.flush();
        }
    }
}

struct SeedSummary {
    double mean = 0.0;
    double stddev = 0.0;
    int n = 0;
    int diverged = 0;
};

inline SeedSummary summarize(const std::vector<RunRecord>& recs) {
    SeedSummary s;
    std::vector<double> accs;
    for (const auto& r : recs) {
        if (r.diverged) {
            ++s.diverged;
            continue;
        }
        accs.push_back(r.final_test_acc);
    }
    s.n = int(accs.size());
    if (s.n == 0) return s;
    for (double a : accs) s.mean += a;
    s.mean /= s.n;
    if (s.n > 1) {
        double var = 0.0;
        for (double a : accs) var += (a - s.mean) * (a - s.mean);
        s.stddev = std::sqrt(var / (s.n - 1));
    }
    return s;
}

// Fan a list of (config, seed) jobs over a bounded worker pool. Results
// land at their job index, so aggregation order never depends on timing.
inline std::vector<RunRecord> run_pool(const std::vector<ExperimentConfig>& cfgs,
                                       const LabeledDataset& train, const LabeledDataset& test,
                                       int threads, bool spectra_rows = true) {
    struct Job {
        const ExperimentConfig* cfg;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& c : cfgs)
        for (auto s : c.seeds) jobs.push_back({&c, s});
    std::vector<RunRecord> out(jobs.size());
    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lk(mu);
                if (next >= jobs.size()) return;
                i = next++;
            }
            out[i] = train_one(*jobs[i].cfg, jobs[i].seed, train, test, spectra_rows);
        }
    };
    const int n = std::max(1, std::min<int>(threads, int(jobs.size())));
    std::vector<std::thread> pool;
    for (int t = 0; t < n - 1; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return out;
}

// Multi-seed single-config run with CSV/JSON artifacts.
inline std::vector<RunRecord> train(const ExperimentConfig& cfg, const LabeledDataset& train_ds,
                                    const LabeledDataset& test_ds) {
    cfg.validate();
    auto recs = run_pool({cfg}, train_ds, test_ds, cfg.threads);
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        write_metrics_csv(cfg.out_dir + "/metrics.csv", recs);
        auto s = summarize(recs);
        nlohmann::json j = {{"config", cfg},
                            {"config_hash", config_hash(cfg)},
                            {"mean_test_acc", s.mean},
                            {"std_test_acc", s.stddev},
                            {"runs", s.n},
                            {"diverged", s.diverged}};
        std::ofstream(cfg.out_dir + "/summary.json") << j.dump(2) << '\n';
    }
    return recs;
}

struct BenchmarkRow {
    Rule rule;
    SeedSummary summary;
};

// Table-style comparison across rules, one config per rule.
inline std::vector<BenchmarkRow> benchmark(const std::vector<ExperimentConfig>& cfgs,
                                           const LabeledDataset& train_ds,
                                           const LabeledDataset& test_ds) {
    if (cfgs.size() < 2) throw ConfigError("benchmark needs at least 2 rules");
    std::vector<BenchmarkRow> table;
    for (const auto& cfg : cfgs) {
        auto recs = run_pool({cfg}, train_ds, test_ds, cfg.threads, false);
        table.push_back({cfg.rule.rule, summarize(recs)});
        if (!cfg.out_dir.empty()) {
            std::filesystem::create_directories(cfg.out_dir);
            write_metrics_csv(cfg.out_dir + "/metrics_" + rule_name(cfg.rule.rule) + ".csv", recs);
        }
    }
    if (!cfgs.front().out_dir.empty()) {
        std::ofstream os(cfgs.front().out_dir + "/benchmark.csv");
        os << "rule,mean_test_acc,std_test_acc,runs,diverged\n";
        for (const auto& row : table)
            os << rule_name(row.rule) << ',' << std::setprecision(10) << row.summary.mean << ','
               << row.summary.stddev << ',' << row.summary.n << ',' << row.summary.diverged
               << '\n';
    }
    return table;
}

enum class SweepMode { Grid64, RatioFixed };

struct SweepEntry {
    RuleConfig rule;
    double val_acc = -1.0;
    bool diverged = false;
};

struct SweepResult {
    std::vector<SweepEntry> entries;
    RuleConfig best;
};

// 64-point learning-rate search on a held-out validation split (last 10%
// of the training set). grid64: 4 values each for (eta_w, eta_v,
// eta_wbar == eta_vbar). ratio-fixed: 8 ratio presets x 8 global scales.
inline SweepResult sweep_learning_rates(const ExperimentConfig& base, SweepMode mode,
                                        const LabeledDataset& full_train) {
    ExperimentConfig cfg = base;
    cfg.validate();
    const Eigen::Index n = full_train.size();
    const Eigen::Index n_train = n - n / 10;
    if (n_train < 1 || n - n_train < 1) throw ConfigError("training set too small to split");
    LabeledDataset tr, val;
    tr.name = full_train.name + "-sweeptrain";
    val.name = full_train.name + "-sweepval";
    tr.num_classes = val.num_classes = full_train.num_classes;
    tr.examples = full_train.examples.topRows(n_train);
    tr.labels.assign(full_train.labels.begin(), full_train.labels.begin() + n_train);
    val.examples = full_train.examples.bottomRows(n - n_train);
    val.labels.assign(full_train.labels.begin() + n_train, full_train.labels.end());

    std::vector<RuleConfig> combos;
    if (mode == SweepMode::Grid64) {
        const double vals[4] = {1e-3, 3e-3, 1e-2, 3e-2};
        for (double ew : vals)
            for (double ev : vals)
                for (double eb : vals) {
                    RuleConfig r = cfg.rule;
                    r.eta_w = ew;
                    r.eta_v = ev;
                    r.eta_wbar = r.eta_vbar = eb;
                    combos.push_back(r);
                }
    } else {
        // ratios are (eta_v, eta_wbar = eta_vbar) relative to eta_w
        const double ratios[8][2] = {{1.0, 1.0},   {0.3, 1.0},  {0.1, 1.0},  {0.3, 0.3},
                                     {0.1, 0.3},   {0.03, 0.3}, {0.01, 0.1}, {0.003, 0.03}};
        const double scales[8] = {1e-3, 3e-3, 1e-2, 2e-2, 3e-2, 5e-2, 1e-1, 3e-1};
        for (const auto& rat : ratios)
            for (double s : scales) {
                RuleConfig r = cfg.rule;
                r.eta_w = s;
                r.eta_v = rat[0] * s;
                r.eta_wbar = r.eta_vbar = rat[1] * s;
                combos.push_back(r);
            }
    }

    SweepResult result;
    cfg.epochs = std::min(cfg.epochs, 5);
    cfg.seeds = {base.seeds.front()};
    cfg.out_dir.clear();
    for (const auto& combo : combos) {
        ExperimentConfig c = cfg;
        c.rule = combo;
        SweepEntry e;
        e.rule = combo;
        auto recs = run_pool({c}, tr, val, cfg.threads, false);
        e.diverged = recs.front().diverged;
        if (!e.diverged) e.val_acc = recs.front().final_test_acc;
        result.entries.push_back(e);
    }
    // deterministic argmax: ties resolve to the earliest (lexicographic
    // enumeration order) entry
    const SweepEntry* best = &result.entries.front();
    for (const auto& e : result.entries)
        if (e.val_acc > best->val_acc) best = &e;
    result.best = best->rule;

    if (!base.out_dir.empty()) {
        std::filesystem::create_directories(base.out_dir);
        std::ofstream os(base.out_dir + "/sweep_lr.csv");
        os << "eta_w,eta_v,eta_wbar,eta_vbar,val_acc,diverged\n";
        for (const auto& e : result.entries)
            os << std::setprecision(10) << e.rule.eta_w << ',' << e.rule.eta_v << ','
               << e.rule.eta_wbar << ',' << e.rule.eta_vbar << ',' << e.val_acc << ','
               << (e.diverged ? 1 : 0) << '\n';
    }
    return result;
}

struct OverparamRow {
    double multiplier = 0.0;
    SeedSummary summary;
};

inline std::vector<OverparamRow> sweep_overparam(const ExperimentConfig& base,
                                                 const std::vector<double>& multipliers,
                                                 const LabeledDataset& train_ds,
                                                 const LabeledDataset& test_ds) {
    std::vector<OverparamRow> rows;
    for (double r : multipliers) {
        if (r <= 0) throw ConfigError("down multiplier must be > 0");
        ExperimentConfig cfg = base;
        cfg.down_multiplier = r;
        cfg.validate();
        auto recs = run_pool({cfg}, train_ds, test_ds, cfg.threads, false);
        rows.push_back({r, summarize(recs)});
    }
    if (!base.out_dir.empty()) {
        std::filesystem::create_directories(base.out_dir);
        std::ofstream os(base.out_dir + "/sweep_overparam.csv");
        os << "multiplier,mean_test_acc,std_test_acc,runs,diverged\n";
        for (const auto& row : rows)
            os << std::setprecision(10) << row.multiplier << ',' << row.summary.mean << ','
               << row.summary.stddev << ',' << row.summary.n << ',' << row.summary.diverged
               << '\n';
    }
    return rows;
}

struct AblationRow {
    PlasticityMask mask;
    SeedSummary summary;
    bool is_linear_reference = false;
};

// One curve per plasticity mask plus a linear-network SGD reference.
inline std::vector<AblationRow> ablate(const ExperimentConfig& base,
                                       const std::vector<PlasticityMask>& masks,
                                       const LabeledDataset& train_ds,
                                       const LabeledDataset& test_ds) {
    for (const auto& m : masks)
        if (!m.w) throw ConfigError("ablation masks must keep W plastic");
    std::vector<AblationRow> rows;
    for (const auto& m : masks) {
        ExperimentConfig cfg = base;
        cfg.rule.mask = m;
        cfg.validate();
        auto recs = run_pool({cfg}, train_ds, test_ds, cfg.threads, false);
        rows.push_back({m, summarize(recs), false});
    }
    // linear reference: depth-2 network (input -> output) trained by SGD
    {
        ExperimentConfig lin = base;
        lin.depth = 2;
        lin.rule = RuleConfig{};
        lin.rule.rule = Rule::Sgd;
        lin.rule.eta_w = base.rule.eta_w;
        lin.rule.gamma = 0.0;
        lin.validate();
        auto recs = run_pool({lin}, train_ds, test_ds, lin.threads, false);
        rows.push_back({PlasticityMask{true, false, false, false}, summarize(recs), true});
    }
    if (!base.out_dir.empty()) {
        std::filesystem::create_directories(base.out_dir);
        std::ofstream os(base.out_dir + "/ablation.csv");
        os << "w,v,wbar,vbar,linear_ref,mean_test_acc,std_test_acc,runs,diverged\n";
        for (const auto& r : rows)
            os << r.mask.w << ',' << r.mask.v << ',' << r.mask.wbar << ',' << r.mask.vbar << ','
               << (r.is_linear_reference ? 1 : 0) << ',' << std::setprecision(10)
               << r.summary.mean << ',' << r.summary.stddev << ',' << r.summary.n << ','
               << r.summary.diverged << '\n';
    }
    return rows;
}

// Raw f64 little-endian matrix dump with a JSON shape sidecar, for
// external plotting of weight spectra.
template <typename S>
void export_spectra(const TwoStreamNetwork<S>& net, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto dump = [&](const Matrix<S>& m, const std::string& stem) {
        std::ofstream os(dir + "/" + stem + ".f64", std::ios::binary);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const double v = double(m(r, c));
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                unsigned char b[8];
                for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
                os.write(reinterpret_cast<const char*>(b), 8);
            }
        nlohmann::json j = {{"rows", m.rows()}, {"cols", m.cols()}, {"dtype", "f64le"},
                            {"order", "row-major"}};
        std::ofstream(dir + "/" + stem + ".json") << j.dump(2) << '\n';
    };
    for (int k = 0; k < net.depth() - 1; ++k) {
        const Matd w = net.layers[std::size_t(k)].W.template cast<double>();
        const Matd vb = net.Vb[std::size_t(k)].template cast<double>();
        dump(Matrix<S>((w * w.transpose()).template cast<S>()), "WWt_layer" + std::to_string(k));
        dump(Matrix<S>((vb * vb.transpose()).template cast<S>()),
             "VbVbt_layer" + std::to_string(k));
        // singular value lists as csv for convenience
        std::ofstream sv(dir + "/sv_W_layer" + std::to_string(k) + ".csv");
        Eigen::BDCSVD<Matd> svd(w);
        for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
            sv << std::setprecision(10) << svd.singularValues()(i) << '\n';
    }
}

}  // namespace sal
