// Command-line driver for the two-stream learning library.
//
// Subcommands: train, benchmark, sweep-lr, sweep-overparam, ablate,
// verify, export-spectra. Exit codes: 0 success, 2 configuration error,
// 3 divergence, 4 failed verification check.

#include "sal/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitVerifyFailed = 4;

struct CommonOpts {
    std::string config_path;
    std::string dataset;
    std::string data_dir;
    std::string rule;
    std::string out_dir;
    std::vector<std::uint64_t> seeds;
    int epochs = -1;
    int threads = 0;
    int standardize = -1;  // -1 = leave config value
};

sal::ExperimentConfig resolve_config(const CommonOpts& o) {
    sal::ExperimentConfig cfg;
    if (!o.config_path.empty()) {
        std::ifstream is(o.config_path);
        if (!is) throw sal::ConfigError("cannot open config: " + o.config_path);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const std::exception& e) {
            throw sal::ConfigError(std::string("bad config json: ") + e.what());
        }
        cfg = j.get<sal::ExperimentConfig>();
    }
    if (!o.dataset.empty()) cfg.dataset = o.dataset;
    if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
    if (!o.rule.empty()) cfg.rule.rule = sal::rule_from_name(o.rule);
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
    if (o.epochs > 0) cfg.epochs = o.epochs;
    if (o.threads > 0) cfg.threads = o.threads;
    if (o.standardize >= 0) cfg.standardize = (o.standardize != 0);
    return cfg;
}

std::pair<sal::LabeledDataset, sal::LabeledDataset> load_dataset(const sal::ExperimentConfig& cfg) {
    const std::string dir = cfg.data_dir.empty() ? ("data/" + cfg.dataset) : cfg.data_dir;
    if (cfg.dataset == "mnist" || cfg.dataset == "fashion_mnist") {
        auto pick = [&](const std::string& stem) {
            for (const std::string& ext : {std::string(".gz"), std::string("")}) {
                const std::string p = dir + "/" + stem + ext;
                if (std::filesystem::exists(p)) return p;
            }
            throw sal::FormatError("missing dataset file: " + dir + "/" + stem + "[.gz]");
        };
        auto train = sal::load_idx(pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte"));
        auto test = sal::load_idx(pick("t10k-images-idx3-ubyte"), pick("t10k-labels-idx1-ubyte"));
        return {std::move(train), std::move(test)};
    }
    if (cfg.dataset == "cifar10") return sal::load_cifar10_binary(dir);
    if (cfg.dataset == "raw") {
        auto train = sal::load_raw_tensor(dir + "/train.json");
        auto test = sal::load_raw_tensor(dir + "/test.json");
        return {std::move(train), std::move(test)};
    }
    throw sal::ConfigError("unknown dataset: " + cfg.dataset);
}

int run_verify(bool verbose) {
    using namespace sal;
    CheckReport report;
    GaussianRng rng(2024);

    Matd x(6, 1), y = Matd::Zero(4, 1);
    rng.fill_gaussian(x, 1.0);
    y(2, 0) = 1.0;

    {  // analytic gradient vs central differences, both losses
        for (LossKind loss : {LossKind::Mse, LossKind::SoftmaxCrossEntropy}) {
            auto net = init_network<double>({{6, 6}, {8, 8}, {5, 5}, {4, 4}}, 3, InitScale::FanInGaussian,
                                            0.0, loss);
            Matd xb(6, 7), yb = Matd::Zero(4, 7);
            GaussianRng r2(5);
            r2.fill_gaussian(xb, 1.0);
            for (int i = 0; i < 7; ++i) yb(i % 4, i) = 1.0;
            report.add(loss == LossKind::Mse ? "finite_diff_mse" : "finite_diff_ce",
                       check_finite_diff(net, xb, yb), 1e-5);
        }
    }
    {  // reduced configuration reproduces backprop exactly
        Matd xb(6, 9), yb = Matd::Zero(4, 9);
        GaussianRng r2(8);
        r2.fill_gaussian(xb, 1.0);
        for (int i = 0; i < 9; ++i) yb(i % 4, i) = 1.0;
        report.add("sgd_reduction_mse",
                   check_sgd_reduction(17, xb, yb, {6, 8, 5, 4}, LossKind::Mse, 0.05, 1e-3), 1e-9);
        report.add("sgd_reduction_ce",
                   check_sgd_reduction(18, xb, yb, {6, 8, 5, 4}, LossKind::SoftmaxCrossEntropy,
                                       0.05, 1e-3),
                   1e-9);
    }
    {  // stationary construction: update equals H * sgd - gamma W
        auto one = [&](CouplingChoice c, std::vector<int> dn, const char* name) {
            auto net = make_stationary_network({6, 8, 5, 4}, dn, c, 29, x, LossKind::Mse);
            report.add(name, check_stationary_updates(net, x, y, 0.1, 1e-3), 1e-6);
            double min_eig = 0.0;
            for (int l = 1; l < net.depth(); ++l)
                min_eig = std::min(min_eig, h_matrix(net, l).min_eigenvalue);
            report.add(std::string(name) + "_h_psd", -min_eig, 1e-10);
        };
        one(CouplingChoice::Identity, {6, 8, 5, 4}, "stationary_identity");
        one(CouplingChoice::Permutation, {6, 8, 5, 4}, "stationary_permutation");
        one(CouplingChoice::RandomWide, {9, 12, 8, 4}, "stationary_random_wide");
    }
    {  // descent: stationary config with small steps never increases loss
        auto net = make_stationary_network({6, 8, 5, 4}, {9, 12, 8, 4}, CouplingChoice::RandomWide,
                                           31, x, LossKind::Mse);
        report.add("descent_one_step", check_descent(net, x, y, {1e-2, 1e-3, 1e-4}), 1e-12);
    }
    {  // coupling alignment contraction at rate (1 - gamma)
        auto net = init_network<double>({{6, 9}, {8, 12}, {5, 8}, {4, 4}}, 41);
        RuleConfig cfg;
        cfg.eta_w = 0.0;
        cfg.eta_v = cfg.eta_vbar = 0.01;
        cfg.eta_wbar = 0.0;
        cfg.gamma = 0.05;
        cfg.mask = {false, true, false, true};
        Matd xb(6, 4), yb = Matd::Zero(4, 4);
        GaussianRng r2(6);
        r2.fill_gaussian(xb, 1.0);
        for (int i = 0; i < 4; ++i) yb(i % 4, i) = 1.0;
        auto step = [&](TwoStreamNetwork<double>& n) {
            ActivationTrace<double> tr;
            forward(n, xb, tr);
            feedback(n, tr, error_signal(tr.h[n.depth() - 1], yb, n.loss));
            apply(n, sal_deltas(n, tr, cfg));
        };
        report.add("alignment_decay", check_alignment_decay(net, step, 10, cfg.gamma), 1e-10);
    }
    {  // every staged delta matches its local-loss gradient
        auto net = init_network<double>({{6, 9}, {8, 12}, {5, 8}, {4, 4}}, 43);
        RuleConfig cfg;
        cfg.eta_w = 0.02;
        cfg.eta_v = 0.005;
        cfg.eta_wbar = 0.01;
        cfg.eta_vbar = 0.01;
        cfg.gamma = 1e-3;
        Matd xb(6, 5), yb = Matd::Zero(4, 5);
        GaussianRng r2(7);
        r2.fill_gaussian(xb, 1.0);
        for (int i = 0; i < 5; ++i) yb(i % 4, i) = 1.0;
        report.add("local_losses", check_local_losses(net, xb, yb, cfg), 1e-12);
    }

    bool ok = true;
    for (const auto& r : report.results) {
        std::printf("%-28s %s  observed=%.3e  threshold=%.3e\n", r.name.c_str(),
                    r.passed ? "PASS" : "FAIL", r.observed, r.threshold);
        ok = ok && r.passed;
        if (verbose && !r.detail.empty()) std::printf("    %s\n", r.detail.c_str());
    }
    return ok ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stream plasticity trainer"};
    app.require_subcommand(1);
    app.failure_message([](const CLI::App* a, const CLI::Error& e) {
        return CLI::FailureMessage::help(a, e);
    });

    CommonOpts opts;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON config file");
        sub->add_option("--dataset", opts.dataset, "mnist|fashion_mnist|cifar10|raw");
        sub->add_option("--data-dir", opts.data_dir, "dataset directory");
        sub->add_option("--rule", opts.rule, "sal|sgd|fa|wm|kp");
        sub->add_option("--seed", opts.seeds, "seed list");
        sub->add_option("--epochs", opts.epochs, "epoch count");
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--threads", opts.threads, "worker pool size");
        sub->add_option("--standardize", opts.standardize,
                        "1 = shift/scale inputs by train-set mean/std");
    };

    auto* c_train = app.add_subcommand("train", "train one configuration");
    add_common(c_train);
    auto* c_bench = app.add_subcommand("benchmark", "compare rules on one dataset");
    add_common(c_bench);
    std::vector<std::string> bench_rules = {"sgd", "fa", "wm", "kp", "sal"};
    c_bench->add_option("--rules", bench_rules, "rules to compare");
    auto* c_sweep = app.add_subcommand("sweep-lr", "learning-rate search");
    add_common(c_sweep);
    std::string sweep_mode = "ratio-fixed";
    c_sweep->add_option("--mode", sweep_mode, "grid64|ratio-fixed");
    auto* c_over = app.add_subcommand("sweep-overparam", "downstream width sweep");
    add_common(c_over);
    std::vector<double> multipliers = {0.5, 1, 2, 4};
    c_over->add_option("--multipliers", multipliers, "downstream width multipliers");
    auto* c_abl = app.add_subcommand("ablate", "plasticity mask ablation");
    add_common(c_abl);
    auto* c_verify = app.add_subcommand("verify", "run the theory checks");
    bool verbose = false;
    c_verify->add_flag("-v,--verbose", verbose, "print check details");
    auto* c_spectra = app.add_subcommand("export-spectra", "dump weight spectra from a checkpoint");
    std::string ckpt_path, spectra_out = "spectra";
    c_spectra->add_option("--checkpoint", ckpt_path, "weights .tsnw file")->required();
    c_spectra->add_option("--out", spectra_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (app.got_subcommand(c_verify)) return run_verify(verbose);
        if (app.got_subcommand(c_spectra)) {
            auto net = sal::load_checkpoint(ckpt_path);
            sal::export_spectra(net, spectra_out);
            return kExitOk;
        }

        auto cfg = resolve_config(opts);
        apply_rule_defaults(cfg);
        cfg.validate();
        auto [train_ds, test_ds] = load_dataset(cfg);

        if (app.got_subcommand(c_train)) {
            auto recs = sal::train(cfg, train_ds, test_ds);
            auto s = sal::summarize(recs);
            std::printf("rule=%s mean=%.2f std=%.2f runs=%d diverged=%d\n",
                        sal::rule_name(cfg.rule.rule).c_str(), s.mean, s.stddev, s.n, s.diverged);
            for (const auto& r : recs)
                if (r.diverged) {
                    std::fprintf(stderr, "diverged: %s\n", r.divergence_note.c_str());
                    return kExitDivergence;
                }
            return kExitOk;
        }
        if (app.got_subcommand(c_bench)) {
            std::vector<sal::ExperimentConfig> cfgs;
            for (const auto& r : bench_rules) {
                sal::ExperimentConfig c = cfg;
                c.rule = sal::RuleConfig{};
                c.rule.rule = sal::rule_from_name(r);
                apply_rule_defaults(c);
                cfgs.push_back(c);
            }
            auto table = sal::benchmark(cfgs, train_ds, test_ds);
            for (const auto& row : table)
                std::printf("%-4s mean=%.2f std=%.2f runs=%d diverged=%d\n",
                            sal::rule_name(row.rule).c_str(), row.summary.mean, row.summary.stddev,
                            row.summary.n, row.summary.diverged);
            return kExitOk;
        }
        if (app.got_subcommand(c_sweep)) {
            sal::SweepMode mode;
            if (sweep_mode == "grid64")
                mode = sal::SweepMode::Grid64;
            else if (sweep_mode == "ratio-fixed")
                mode = sal::SweepMode::RatioFixed;
            else
                throw sal::ConfigError("unknown sweep mode: " + sweep_mode);
            auto res = sal::sweep_learning_rates(cfg, mode, train_ds);
            std::printf("best: eta_w=%g eta_v=%g eta_wbar=%g eta_vbar=%g\n", res.best.eta_w,
                        res.best.eta_v, res.best.eta_wbar, res.best.eta_vbar);
            return kExitOk;
        }
        if (app.got_subcommand(c_over)) {
            auto rows = sal::sweep_overparam(cfg, multipliers, train_ds, test_ds);
            for (const auto& row : rows)
                std::printf("r=%.2f mean=%.2f std=%.2f\n", row.multiplier, row.summary.mean,
                            row.summary.stddev);
            return kExitOk;
        }
        if (app.got_subcommand(c_abl)) {
            std::vector<sal::PlasticityMask> masks = {
                {true, true, true, true}, {true, false, false, false}, {true, false, false, true},
                {true, true, false, false}, {true, false, true, false}};
            auto rows = sal::ablate(cfg, masks, train_ds, test_ds);
            for (const auto& row : rows)
                std::printf("w=%d v=%d wbar=%d vbar=%d linear=%d mean=%.2f\n", row.mask.w,
                            row.mask.v, row.mask.wbar, row.mask.vbar, row.is_linear_reference,
                            row.summary.mean);
            return kExitOk;
        }
    } catch (const sal::DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDivergence;
    } catch (const sal::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitConfig;
}
