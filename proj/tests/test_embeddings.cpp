#include "aen/embeddings.hpp"

#include "aen/core.hpp"
#include "aen/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

using namespace aen;

namespace {

TokenEmbeddings make_tokens(std::initializer_list<std::initializer_list<double>> rows,
                            std::initializer_list<std::uint8_t> mask) {
    TokenEmbeddings t;
    const std::size_t r = rows.size();
    const std::size_t c = rows.begin()->size();
    t.matrix = Matrix(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        std::size_t j = 0;
        for (double v : row) t.matrix(i, j++) = v;
        ++i;
    }
    t.mask.assign(mask);
    return t;
}

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const char* name)
        : path(std::filesystem::temp_directory_path() / name) {}
    ~TempFile() {
        std::error_code ec;
        std::filesystem::remove(path, ec);
    }
};

} // namespace

TEST_CASE("mean pool averages attended rows") {
    const auto t = make_tokens({{1, 2}, {3, 4}}, {1, 1});
    const Vector pooled = mean_pool(t);
    CHECK(pooled == Vector{2, 3});
}

TEST_CASE("mean pool skips masked rows") {
    const auto t = make_tokens({{1, 2}, {9, 9}}, {1, 0});
    CHECK(mean_pool(t) == Vector{1, 2});
}

TEST_CASE("mean pool of identical rows is that row") {
    const auto t = make_tokens({{5, -1, 0.5}, {5, -1, 0.5}, {5, -1, 0.5}}, {1, 0, 1});
    CHECK(mean_pool(t) == Vector{5, -1, 0.5});
}

TEST_CASE("mean pool rejects all-masked input") {
    const auto t = make_tokens({{1, 2}}, {0});
    CHECK_THROWS_AS(mean_pool(t), std::domain_error);
}

TEST_CASE("mean pool is invariant under row permutation") {
    const auto a = make_tokens({{1, 0}, {2, 5}, {-3, 1}}, {1, 1, 1});
    const auto b = make_tokens({{-3, 1}, {1, 0}, {2, 5}}, {1, 1, 1});
    const Vector pa = mean_pool(a);
    const Vector pb = mean_pool(b);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t j = 0; j < pa.size(); ++j) {
        CHECK(pa[j] == doctest::Approx(pb[j]).epsilon(1e-15));
    }
}

TEST_CASE("mean pool is linear in a global scale") {
    auto t = make_tokens({{1, 2}, {3, -4}, {0.5, 0.25}}, {1, 1, 1});
    const Vector base = mean_pool(t);
    for (auto& v : t.matrix.data) v *= 3.0;
    const Vector scaled = mean_pool(t);
    for (std::size_t j = 0; j < base.size(); ++j) {
        CHECK(scaled[j] == doctest::Approx(3.0 * base[j]).epsilon(1e-14));
    }
}

TEST_CASE("tokenization lowercases and splits on whitespace") {
    CHECK(toy_tokenize("Hello  World") == std::vector<std::string>{"hello", "world"});
    CHECK(toy_tokenize("  A\tB\nC ") == std::vector<std::string>{"a", "b", "c"});
    CHECK(toy_tokenize("   ").empty());
    CHECK(toy_tokenize("one") == std::vector<std::string>{"one"});
}

TEST_CASE("toy encoder tables are reproducible from the seed") {
    const auto a = ToyEncoder::make(128, 16, 42);
    const auto b = ToyEncoder::make(128, 16, 42);
    CHECK(a.table == b.table);
    const auto c = ToyEncoder::make(128, 16, 43);
    CHECK_FALSE(a.table == c.table);
}

TEST_CASE("toy encoder init has the documented scale") {
    const auto enc = ToyEncoder::make(512, 64, 7);
    double sum = 0.0, sumsq = 0.0;
    for (double v : enc.table.data) {
        sum += v;
        sumsq += v * v;
    }
    const auto n = static_cast<double>(enc.table.size());
    const double mean = sum / n;
    const double std_dev = std::sqrt(sumsq / n - mean * mean);
    CHECK(std::abs(mean) < 1e-3);
    CHECK(std_dev == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("toy encode is deterministic") {
    const auto enc = ToyEncoder::make(4096, 8, 1);
    const auto a = toy_encode(enc, "The cat sat");
    const auto b = toy_encode(enc, "The cat sat");
    CHECK(a.matrix == b.matrix);
    CHECK(a.mask == b.mask);
    CHECK(a.source_rows == b.source_rows);
}

TEST_CASE("repeated tokens share a table row") {
    const auto enc = ToyEncoder::make(4096, 8, 1);
    const auto t = toy_encode(enc, "hello hello");
    REQUIRE(t.token_count() == 2);
    CHECK(t.source_rows[0] == t.source_rows[1]);
    for (std::size_t j = 0; j < t.dim(); ++j) {
        CHECK(t.matrix(0, j) == t.matrix(1, j));
    }
}

TEST_CASE("toy encode shape and mask contract") {
    const auto enc = ToyEncoder::make(4096, 8, 1);
    const auto t = toy_encode(enc, "a b c");
    CHECK(t.token_count() == 3);
    CHECK(t.dim() == 8);
    CHECK(t.attended_count() == 3);
    CHECK(t.source_rows.size() == 3);
}

TEST_CASE("toy encode rejects empty text") {
    const auto enc = ToyEncoder::make(4096, 8, 1);
    CHECK_THROWS_AS(toy_encode(enc, ""), std::domain_error);
    CHECK_THROWS_AS(toy_encode(enc, " \t\n"), std::domain_error);
}

TEST_CASE("case folds into the same row") {
    const auto enc = ToyEncoder::make(4096, 8, 1);
    const auto a = toy_encode(enc, "HELLO");
    const auto b = toy_encode(enc, "hello");
    CHECK(a.matrix == b.matrix);
}

TEST_CASE("perturbing one table row moves exactly the tokens hashed to it") {
    auto enc = ToyEncoder::make(256, 4, 9);
    const auto before = toy_encode(enc, "alpha beta alpha");
    const std::uint32_t target = toy_token_row(enc, "alpha");
    const double delta = 0.125;
    for (std::size_t j = 0; j < enc.dim; ++j) enc.table(target, j) += delta;
    const auto after = toy_encode(enc, "alpha beta alpha");
    for (std::size_t i = 0; i < before.token_count(); ++i) {
        const bool hit = before.source_rows[i] == target;
        for (std::size_t j = 0; j < before.dim(); ++j) {
            const double diff = after.matrix(i, j) - before.matrix(i, j);
            CHECK(diff == (hit ? delta : 0.0));
        }
    }
}

TEST_CASE("embedding files round trip within 32-bit precision") {
    SplitMix64 rng(31);
    TokenEmbeddings t;
    t.matrix = Matrix(5, 384);
    for (auto& v : t.matrix.data) v = rng.next_normal();
    t.mask = {1, 1, 0, 1, 1};

    TempFile f("aen_test_roundtrip.embd");
    write_embeddings(f.path, t);
    const auto back = read_embeddings(f.path);
    REQUIRE(back.token_count() == 5);
    REQUIRE(back.dim() == 384);
    CHECK(back.mask == t.mask);
    for (std::size_t i = 0; i < t.matrix.size(); ++i) {
        const auto as_f32 = static_cast<double>(static_cast<float>(t.matrix.data[i]));
        CHECK(back.matrix.data[i] == as_f32);
    }
}

TEST_CASE("float32-representable values survive the file format exactly") {
    auto t = make_tokens({{1.0, -0.5}, {0.25, 1024.0}}, {1, 1});
    TempFile f("aen_test_exact.embd");
    write_embeddings(f.path, t);
    const auto back = read_embeddings(f.path);
    CHECK(back.matrix == t.matrix);
}

TEST_CASE("wrong magic is a format error") {
    TempFile f("aen_test_magic.embd");
    {
        std::ofstream out(f.path, std::ios::binary);
        out << "NOPE and some trailing bytes";
    }
    CHECK_THROWS_AS(read_embeddings(f.path), format_error);
}

TEST_CASE("truncated payload is a format error") {
    auto t = make_tokens({{1.0, 2.0}, {3.0, 4.0}}, {1, 1});
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_embeddings_stream(buf, t);
    const std::string full = buf.str();
    std::stringstream cut(full.substr(0, full.size() - 3),
                          std::ios::in | std::ios::out | std::ios::binary);
    CHECK_THROWS_AS(read_embeddings_stream(cut), format_error);
}

TEST_CASE("zero-token payload is rejected on read") {
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    buf.write("AENE", 4);
    io::write_u16(buf, 1);
    io::write_u32(buf, 8); // dim
    io::write_u32(buf, 0); // token count
    CHECK_THROWS_AS(read_embeddings_stream(buf), format_error);
}

TEST_CASE("unsupported version is rejected") {
    auto t = make_tokens({{1.0}}, {1});
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_embeddings_stream(buf, t);
    std::string bytes = buf.str();
    bytes[4] = 2; // bump the version field
    std::stringstream bad(bytes, std::ios::in | std::ios::out | std::ios::binary);
    CHECK_THROWS_AS(read_embeddings_stream(bad), format_error);
}

TEST_CASE("validate rejects inconsistent masks and non-finite values") {
    auto t = make_tokens({{1.0, 2.0}}, {1, 1}); // mask longer than rows
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    auto u = make_tokens({{1.0, std::nan("")}}, {1});
    CHECK_THROWS_AS(u.validate(), std::invalid_argument);
}
