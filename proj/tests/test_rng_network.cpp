#include "sal/network.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>

using namespace sal;

TEST_CASE("split_seed separates streams") {
    CHECK(split_seed(0, 0) != split_seed(0, 1));
    CHECK(split_seed(0, 0) != split_seed(1, 0));
    CHECK(split_seed(42, 7) == split_seed(42, 7));
}

TEST_CASE("gaussian rng is deterministic and roughly standard") {
    GaussianRng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

    GaussianRng r(9);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = r.next();
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("fill_gaussian order is column-major and scaled") {
    GaussianRng a(5), b(5);
    Matd m(3, 2);
    a.fill_gaussian(m, 2.0);
    // same stream consumed column by column
    for (int c = 0; c < 2; ++c)
        for (int r = 0; r < 3; ++r) CHECK(m(r, c) == doctest::Approx(2.0 * b.next()));
}

TEST_CASE("init_network shapes and invariants") {
    auto net = init_network<double>({{7, 9}, {5, 8}, {3, 3}}, 1);
    REQUIRE(net.depth() == 3);
    CHECK(net.layers[0].W.rows() == 5);
    CHECK(net.layers[0].W.cols() == 7);
    CHECK(net.layers[0].Wb.rows() == 9);
    CHECK(net.layers[0].Wb.cols() == 8);
    CHECK(net.V[0].rows() == 9);
    CHECK(net.V[0].cols() == 7);
    CHECK(net.Vb[0].rows() == 7);
    CHECK(net.Vb[0].cols() == 9);
    // output coupling pinned to the identity
    CHECK(net.Vb[2].isApprox(Matd(Matd::Identity(3, 3))));
}

TEST_CASE("init_network is seed-deterministic and seed-sensitive") {
    auto a = init_network<double>({{4, 4}, {5, 5}, {2, 2}}, 10);
    auto b = init_network<double>({{4, 4}, {5, 5}, {2, 2}}, 10);
    auto c = init_network<double>({{4, 4}, {5, 5}, {2, 2}}, 11);
    CHECK(a.layers[0].W == b.layers[0].W);
    CHECK(a.V[1] == b.V[1]);
    CHECK(a.layers[0].W != c.layers[0].W);
}

TEST_CASE("validate_dims rejects malformed stacks") {
    CHECK_THROWS_AS(validate_dims({{4, 4}}), ConfigError);
    CHECK_THROWS_AS(validate_dims({{4, 4}, {0, 3}}), ConfigError);
    // output must be square across streams
    CHECK_THROWS_AS(validate_dims({{4, 4}, {3, 5}}), ConfigError);
}

TEST_CASE("checkpoint round-trip is lossless") {
    auto net = init_network<double>({{6, 9}, {4, 7}, {3, 3}}, 77);
    const std::string path = "test_ckpt_roundtrip.tsnw";
    save_checkpoint(net, path);
    auto back = load_checkpoint(path);
    REQUIRE(back.depth() == net.depth());
    for (int k = 0; k < net.depth() - 1; ++k) {
        CHECK(back.layers[k].W == net.layers[k].W);
        CHECK(back.layers[k].Wb == net.layers[k].Wb);
    }
    for (int j = 0; j < net.depth(); ++j) {
        CHECK(back.V[j] == net.V[j]);
        CHECK(back.Vb[j] == net.Vb[j]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint header is validated") {
    const std::string path = "test_ckpt_bad.tsnw";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint("does_not_exist.tsnw"), FormatError);
}
