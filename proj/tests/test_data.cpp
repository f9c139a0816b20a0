#include "sal/data.hpp"

#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

using namespace sal;

namespace {

void put_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back((unsigned char)(x >> 24));
    v.push_back((unsigned char)(x >> 16));
    v.push_back((unsigned char)(x >> 8));
    v.push_back((unsigned char)x);
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& v) {
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size()));
}

void write_gz(const std::string& path, const std::vector<unsigned char>& v) {
    gzFile f = gzopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    gzwrite(f, v.data(), unsigned(v.size()));
    gzclose(f);
}

// 3 examples of 2x2 u8 images with labels 0,1,2.
std::vector<unsigned char> idx_images() {
    std::vector<unsigned char> v;
    put_be32(v, 0x00000803u);
    put_be32(v, 3);
    put_be32(v, 2);
    put_be32(v, 2);
    for (unsigned char b : {0, 51, 102, 153, 204, 255, 0, 255, 128, 64, 32, 16}) v.push_back(b);
    return v;
}

std::vector<unsigned char> idx_labels() {
    std::vector<unsigned char> v;
    put_be32(v, 0x00000801u);
    put_be32(v, 3);
    v.push_back(0);
    v.push_back(1);
    v.push_back(2);
    return v;
}

struct TempDir {
    std::filesystem::path p;
    TempDir() : p(std::filesystem::temp_directory_path() / "sal_data_test") {
        std::filesystem::create_directories(p);
    }
    ~TempDir() { std::filesystem::remove_all(p); }
    std::string file(const std::string& n) const { return (p / n).string(); }
};

}  // namespace

TEST_CASE("load_idx parses plain and gzipped files identically") {
    TempDir td;
    write_bytes(td.file("img.idx"), idx_images());
    write_bytes(td.file("lab.idx"), idx_labels());
    write_gz(td.file("img.idx.gz"), idx_images());
    write_gz(td.file("lab.idx.gz"), idx_labels());

    auto plain = load_idx(td.file("img.idx"), td.file("lab.idx"));
    auto gz = load_idx(td.file("img.idx.gz"), td.file("lab.idx.gz"));

    REQUIRE(plain.size() == 3);
    REQUIRE(plain.dim() == 4);
    CHECK(plain.num_classes == 3);
    CHECK(plain.labels == std::vector<int>{0, 1, 2});
    CHECK(plain.examples(0, 0) == doctest::Approx(0.0));
    CHECK(plain.examples(0, 1) == doctest::Approx(51.0 / 255.0));
    CHECK(plain.examples(1, 1) == doctest::Approx(1.0));
    CHECK(gz.examples == plain.examples);
    CHECK(gz.labels == plain.labels);
}

TEST_CASE("load_idx rejects malformed files") {
    TempDir td;
    auto img = idx_images();
    auto lab = idx_labels();

    auto bad_magic = img;
    bad_magic[3] = 0x99;
    write_bytes(td.file("badmagic.idx"), bad_magic);
    write_bytes(td.file("lab.idx"), lab);
    CHECK_THROWS_AS(load_idx(td.file("badmagic.idx"), td.file("lab.idx")), FormatError);

    auto truncated = img;
    truncated.pop_back();
    write_bytes(td.file("trunc.idx"), truncated);
    CHECK_THROWS_AS(load_idx(td.file("trunc.idx"), td.file("lab.idx")), FormatError);

    auto short_lab = lab;
    short_lab.pop_back();
    write_bytes(td.file("img.idx"), img);
    write_bytes(td.file("shortlab.idx"), short_lab);
    CHECK_THROWS_AS(load_idx(td.file("img.idx"), td.file("shortlab.idx")), FormatError);

    CHECK_THROWS_AS(load_idx(td.file("missing.idx"), td.file("lab.idx")), FormatError);
}

TEST_CASE("cifar10 binary batches parse records of 3073 bytes") {
    TempDir td;
    std::vector<unsigned char> rec;
    for (int i = 0; i < 2; ++i) {
        rec.push_back((unsigned char)(7 - i));  // labels 7, 6
        for (int j = 0; j < 3072; ++j) rec.push_back((unsigned char)((i + j) % 256));
    }
    write_bytes(td.file("batch.bin"), rec);
    auto ds = load_cifar10_file(td.file("batch.bin"));
    REQUIRE(ds.size() == 2);
    CHECK(ds.dim() == 3072);
    CHECK(ds.labels == std::vector<int>{7, 6});
    CHECK(ds.examples(0, 0) == doctest::Approx(0.0));
    CHECK(ds.examples(1, 0) == doctest::Approx(1.0 / 255.0));

    rec.pop_back();
    write_bytes(td.file("badsize.bin"), rec);
    CHECK_THROWS_AS(load_cifar10_file(td.file("badsize.bin")), FormatError);
}

TEST_CASE("load_cifar10_binary concatenates five training batches") {
    TempDir td;
    for (int b = 1; b <= 5; ++b) {
        std::vector<unsigned char> rec;
        rec.push_back((unsigned char)(b % 10));
        for (int j = 0; j < 3072; ++j) rec.push_back((unsigned char)b);
        write_bytes(td.file("data_batch_" + std::to_string(b) + ".bin"), rec);
    }
    std::vector<unsigned char> test_rec;
    test_rec.push_back(9);
    for (int j = 0; j < 3072; ++j) test_rec.push_back(0);
    write_bytes(td.file("test_batch.bin"), test_rec);

    auto [train, test] = load_cifar10_binary(td.p.string());
    REQUIRE(train.size() == 5);
    CHECK(train.labels == std::vector<int>{1, 2, 3, 4, 5});
    CHECK(train.examples(2, 100) == doctest::Approx(3.0 / 255.0));
    REQUIRE(test.size() == 1);
    CHECK(test.labels[0] == 9);
}

TEST_CASE("load_raw_tensor reads f32 examples and u32 labels via manifest") {
    TempDir td;
    const std::size_t n = 4, d = 3;
    std::vector<float> ex = {0.0f, 0.5f, 1.0f, 0.25f, 0.75f, 0.125f,
                             1.0f, 0.0f, 0.5f, 0.2f,  0.4f,  0.6f};
    std::vector<std::uint32_t> lb = {0, 1, 1, 0};
    {
        std::ofstream os(td.file("ex.f32"), std::ios::binary);
        os.write(reinterpret_cast<const char*>(ex.data()), std::streamsize(ex.size() * 4));
        std::ofstream ls(td.file("lb.u32"), std::ios::binary);
        ls.write(reinterpret_cast<const char*>(lb.data()), std::streamsize(lb.size() * 4));
    }
    {
        std::ofstream ms(td.file("manifest.json"));
        ms << R"({"examples_path":"ex.f32","labels_path":"lb.u32","n":4,"d":3,"num_classes":2})";
    }
    auto ds = load_raw_tensor(td.file("manifest.json"));
    REQUIRE(ds.size() == Eigen::Index(n));
    REQUIRE(ds.dim() == Eigen::Index(d));
    CHECK(ds.examples(1, 2) == doctest::Approx(0.125));
    CHECK(ds.labels == std::vector<int>{0, 1, 1, 0});

    // size mismatch is rejected
    {
        std::ofstream ms(td.file("bad.json"));
        ms << R"({"examples_path":"ex.f32","labels_path":"lb.u32","n":5,"d":3,"num_classes":2})";
    }
    CHECK_THROWS_AS(load_raw_tensor(td.file("bad.json")), FormatError);
    CHECK_THROWS_AS(load_raw_tensor(td.file("absent.json")), FormatError);
}

TEST_CASE("one_hot produces unit rows and validates labels") {
    auto y = one_hot({2, 0, 1}, 3);
    Matd expect(3, 3);
    expect << 0, 0, 1, 1, 0, 0, 0, 1, 0;
    CHECK(y == expect);
    CHECK_THROWS_AS(one_hot({3}, 3), FormatError);
}

TEST_CASE("batch_indices is a deterministic partition") {
    BatchPlan plan;
    plan.batch_size = 4;
    plan.shuffle_seed = 99;
    plan.drop_last = true;

    auto a = batch_indices(10, plan, 0);
    auto b = batch_indices(10, plan, 0);
    auto c = batch_indices(10, plan, 1);
    REQUIRE(a.size() == 2);  // 10/4 -> 2 full batches, remainder dropped
    CHECK(a == b);
    CHECK(a != c);

    // each index appears at most once
    std::vector<int> seen(10, 0);
    for (const auto& batch : a)
        for (auto i : batch) seen[std::size_t(i)]++;
    for (int s : seen) CHECK(s <= 1);

    plan.drop_last = false;
    auto full = batch_indices(10, plan, 0);
    REQUIRE(full.size() == 3);
    CHECK(full[2].size() == 2);
    std::size_t total = 0;
    for (const auto& batch : full) total += batch.size();
    CHECK(total == 10);

    plan.batch_size = 0;
    CHECK_THROWS_AS(batch_indices(10, plan, 0), ConfigError);
    plan.batch_size = 11;
    CHECK_THROWS_AS(batch_indices(10, plan, 0), ConfigError);
}

TEST_CASE("gather_batch builds column-major batches") {
    LabeledDataset ds;
    ds.name = "toy";
    ds.num_classes = 2;
    ds.examples.resize(3, 2);
    ds.examples << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
    ds.labels = {0, 1, 0};
    Matd targets = one_hot(ds.labels, 2);

    Matd x, y;
    gather_batch(ds, targets, {2, 0}, x, y);
    REQUIRE(x.rows() == 2);
    REQUIRE(x.cols() == 2);
    CHECK(x(0, 0) == doctest::Approx(0.5));
    CHECK(x(1, 0) == doctest::Approx(0.6));
    CHECK(x(0, 1) == doctest::Approx(0.1));
    CHECK(y(0, 0) == doctest::Approx(1.0));
    CHECK(y(1, 1) == doctest::Approx(0.0));
}
