#include "aen/kde.hpp"

#include "aen/core.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

using namespace aen;

namespace {

// Frozen from an arbitrary-precision evaluation of (4/300)^(1/5) * 2.
constexpr double kSilverman100Sigma2 = 0.843369212685499923982580874689;
// Frozen from an arbitrary-precision evaluation of (4/3)^(1/5).
constexpr double kSilvermanOverScott = 1.05922384104881225329467473346;

constexpr double kGaussAt0 = 0.398942280401432677939946059934;
constexpr double kGaussAt1 = 0.241970724519143349797830192936;

// Samples rescaled so their n-1 sample standard deviation is sigma up to
// floating point rounding.
std::vector<double> samples_with_std(std::size_t n, double sigma, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<double> out(n);
    for (auto& v : out) v = rng.next_normal();
    const double s = sample_std(out);
    for (auto& v : out) v *= sigma / s;
    return out;
}

TokenEmbeddings tokens_from_matrix(Matrix m) {
    TokenEmbeddings t;
    t.mask.assign(m.rows, 1);
    t.matrix = std::move(m);
    return t;
}

TokenEmbeddings single_token(std::initializer_list<double> values) {
    Matrix m(1, values.size());
    std::copy(values.begin(), values.end(), m.data.begin());
    return tokens_from_matrix(std::move(m));
}

TokenEmbeddings random_tokens(std::size_t m, std::size_t n, std::uint64_t seed,
                              double spread = 1.0) {
    SplitMix64 rng(seed);
    Matrix mat(m, n);
    for (auto& v : mat.data) v = spread * rng.next_normal();
    return tokens_from_matrix(std::move(mat));
}

double kink_margin(KernelKind kind, double u) {
    switch (kind) {
    case KernelKind::Gaussian:
        return 1.0;
    case KernelKind::Epanechnikov:
        return std::abs(std::abs(u) - 1.0);
    case KernelKind::Triangular:
        return std::min(std::abs(std::abs(u) - 1.0), std::abs(u));
    }
    return 0.0;
}

} // namespace

TEST_CASE("sample std uses the n-1 denominator") {
    const std::vector<double> v{0.0, 2.0};
    CHECK(sample_std(v) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    const std::vector<double> one{3.5};
    CHECK(sample_std(one) == 0.0);
    CHECK_THROWS_AS(sample_std(std::vector<double>{}), std::domain_error);
}

TEST_CASE("scott bandwidth for 32 unit-variance samples is one half") {
    const auto s = samples_with_std(32, 1.0, 5);
    CHECK(std::abs(estimate_bandwidth(BandwidthRule::Scott, s) - 0.5) < 1e-12);
}

TEST_CASE("silverman bandwidth matches the high-precision oracle") {
    const auto s = samples_with_std(100, 2.0, 6);
    CHECK(std::abs(estimate_bandwidth(BandwidthRule::Silverman, s) - kSilverman100Sigma2) < 1e-9);
}

TEST_CASE("degenerate samples fall back to the bandwidth floor") {
    const std::vector<double> identical(10, 4.25);
    CHECK(estimate_bandwidth(BandwidthRule::Scott, identical) == kBandwidthFloor);
    CHECK(estimate_bandwidth(BandwidthRule::Silverman, identical) == kBandwidthFloor);
    const std::vector<double> one{7.0};
    CHECK(estimate_bandwidth(BandwidthRule::Scott, one) == kBandwidthFloor);
}

TEST_CASE("fixed bandwidth returns its constant and validates it") {
    const std::vector<double> s{1.0, 2.0, 3.0};
    CHECK(estimate_bandwidth(BandwidthRule::Fixed, s, 0.75) == 0.75);
    CHECK_THROWS_AS(estimate_bandwidth(BandwidthRule::Fixed, s, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(estimate_bandwidth(BandwidthRule::Fixed, s, -1.0), std::invalid_argument);
}

TEST_CASE("empty sample list is a domain error") {
    CHECK_THROWS_AS(estimate_bandwidth(BandwidthRule::Scott, std::vector<double>{}),
                    std::domain_error);
}

TEST_CASE("silverman exceeds scott by exactly the constant factor") {
    // (4/(3n))^(1/5) = (4/3)^(1/5) * n^(-1/5), so the two rules differ by the
    // sample-independent factor (4/3)^(1/5) ~ 1.0592 with Silverman larger.
    SplitMix64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.next_below(200);
        const auto s = samples_with_std(n, 0.1 + 5.0 * rng.next_unit(), rng.next());
        const double scott = estimate_bandwidth(BandwidthRule::Scott, s);
        const double silverman = estimate_bandwidth(BandwidthRule::Silverman, s);
        CHECK(silverman >= scott);
        CHECK(silverman / scott == doctest::Approx(kSilvermanOverScott).epsilon(1e-12));
    }
}

TEST_CASE("bandwidth rule names round trip") {
    CHECK(parse_bandwidth_rule("scott") == BandwidthRule::Scott);
    CHECK(parse_bandwidth_rule("silverman") == BandwidthRule::Silverman);
    CHECK(parse_bandwidth_rule("fixed") == BandwidthRule::Fixed);
    CHECK(bandwidth_rule_name(BandwidthRule::Scott) == "scott");
    CHECK_THROWS_AS(parse_bandwidth_rule("plugin"), std::invalid_argument);
}

TEST_CASE("single-token kde floors every bandwidth") {
    const auto t = single_token({0.5, -2.0, 3.0});
    const auto kde = build_kde(t, KernelKind::Gaussian, BandwidthRule::Scott);
    CHECK(kde.n_effective == 1);
    CHECK(kde.centers.rows == 1);
    REQUIRE(kde.bandwidths.size() == 3);
    for (double h : kde.bandwidths) CHECK(h == kBandwidthFloor);
}

TEST_CASE("per-column bandwidths come from that column") {
    // Column 0 rescaled to unit sample std; column 1 constant.
    const auto col0 = samples_with_std(32, 1.0, 8);
    Matrix m(32, 2);
    for (std::size_t i = 0; i < 32; ++i) {
        m(i, 0) = col0[i];
        m(i, 1) = 9.0;
    }
    const auto kde = build_kde(tokens_from_matrix(std::move(m)), KernelKind::Gaussian,
                               BandwidthRule::Scott);
    CHECK(std::abs(kde.bandwidths[0] - 0.5) < 1e-12);
    CHECK(kde.bandwidths[1] == kBandwidthFloor);
}

TEST_CASE("masked tokens are excluded from the centers") {
    auto t = random_tokens(8, 3, 13);
    t.mask = {1, 0, 1, 1, 0, 0, 1, 1};
    const auto kde = build_kde(t, KernelKind::Gaussian, BandwidthRule::Scott);
    CHECK(kde.n_effective == 5);
    CHECK(kde.centers.rows == 5);
    // First kept row is token 0, second kept row is token 2.
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(kde.centers(1, j) == t.matrix(2, j));
    }
}

TEST_CASE("all-masked input cannot build a kde") {
    auto t = random_tokens(4, 2, 14);
    t.mask = {0, 0, 0, 0};
    CHECK_THROWS_AS(build_kde(t, KernelKind::Gaussian, BandwidthRule::Scott), std::domain_error);
}

TEST_CASE("single gaussian kernel evaluates to the kernel itself") {
    const auto kde = build_kde(single_token({0.0}), KernelKind::Gaussian, BandwidthRule::Fixed, 1.0);
    const auto d = eval_density(kde, {0.0});
    REQUIRE(d.size() == 1);
    CHECK(d[0] == doctest::Approx(kGaussAt0).epsilon(1e-14));
}

TEST_CASE("two symmetric centers average their kernel values") {
    Matrix m(2, 1);
    m(0, 0) = 0.0;
    m(1, 0) = 2.0;
    const auto kde = build_kde(tokens_from_matrix(std::move(m)), KernelKind::Gaussian,
                               BandwidthRule::Fixed, 1.0);
    const auto d = eval_density(kde, {1.0});
    CHECK(d[0] == doctest::Approx(kGaussAt1).epsilon(1e-14));
}

TEST_CASE("compact kernels vanish far outside the data") {
    const auto t = random_tokens(6, 4, 15);
    const auto kde = build_kde(t, KernelKind::Epanechnikov, BandwidthRule::Scott);
    Vector query(4);
    for (std::size_t j = 0; j < 4; ++j) {
        double top = kde.centers(0, j);
        for (std::size_t i = 1; i < kde.centers.rows; ++i) top = std::max(top, kde.centers(i, j));
        query[j] = top + 9.0 * kde.bandwidths[j];
    }
    const auto d = eval_density(kde, query);
    for (double v : d) CHECK(v == 0.0);
}

TEST_CASE("densities are nonnegative everywhere") {
    const auto t = random_tokens(10, 5, 16);
    SplitMix64 rng(17);
    for (KernelKind kind :
         {KernelKind::Gaussian, KernelKind::Epanechnikov, KernelKind::Triangular}) {
        const auto kde = build_kde(t, kind, BandwidthRule::Scott);
        for (int trial = 0; trial < 200; ++trial) {
            Vector q(5);
            for (auto& v : q) v = 6.0 * (rng.next_unit() - 0.5);
            for (double v : eval_density(kde, q)) CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("query dimension mismatches are rejected") {
    const auto kde = build_kde(random_tokens(4, 3, 18), KernelKind::Gaussian, BandwidthRule::Scott);
    CHECK_THROWS_AS(eval_density(kde, {1.0, 2.0}), std::domain_error);
    CHECK_THROWS_AS(eval_density_gradients(kde, {1.0, 2.0, 3.0, 4.0}), std::domain_error);
    CHECK_THROWS_AS(eval_density(kde, {1.0, std::nan(""), 0.0}), std::domain_error);
}

TEST_CASE("each dimension's density integrates to one") {
    SplitMix64 rng(19);
    for (KernelKind kind :
         {KernelKind::Gaussian, KernelKind::Epanechnikov, KernelKind::Triangular}) {
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t m = 1 + rng.next_below(16);
            const std::size_t n = 1 + rng.next_below(6);
            const auto t = random_tokens(m, n, rng.next(), 2.0);
            const auto kde = build_kde(t, kind, BandwidthRule::Scott);
            for (std::size_t j = 0; j < n; ++j) {
                double lo = kde.centers(0, j), hi = kde.centers(0, j);
                for (std::size_t i = 1; i < m; ++i) {
                    lo = std::min(lo, kde.centers(i, j));
                    hi = std::max(hi, kde.centers(i, j));
                }
                lo -= 8.0 * kde.bandwidths[j];
                hi += 8.0 * kde.bandwidths[j];
                const std::size_t steps = 20000;
                const double dx = (hi - lo) / static_cast<double>(steps);
                double acc = 0.0;
                Vector q(n, 0.0);
                for (std::size_t k = 0; k <= steps; ++k) {
                    q[j] = lo + static_cast<double>(k) * dx;
                    const double f = eval_density(kde, q)[j];
                    acc += (k == 0 || k == steps) ? 0.5 * f : f;
                }
                CHECK(acc * dx == doctest::Approx(1.0).epsilon(1e-3));
            }
        }
    }
}

TEST_CASE("densities ignore the order of center rows") {
    const auto t = random_tokens(7, 3, 20);
    auto shuffled = t;
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    SplitMix64 rng(21);
    for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.next_below(i)]);
    }
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t j = 0; j < 3; ++j) shuffled.matrix(i, j) = t.matrix(perm[i], j);
    }
    const auto a = build_kde(t, KernelKind::Gaussian, BandwidthRule::Scott);
    const auto b = build_kde(shuffled, KernelKind::Gaussian, BandwidthRule::Scott);
    SplitMix64 qrng(22);
    for (int trial = 0; trial < 20; ++trial) {
        Vector q(3);
        for (auto& v : q) v = 4.0 * (qrng.next_unit() - 0.5);
        const auto da = eval_density(a, q);
        const auto db = eval_density(b, q);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(da[j] == doctest::Approx(db[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("duplicating every center is a no-op under a fixed bandwidth") {
    const auto t = random_tokens(6, 2, 23);
    Matrix doubled(12, 2);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            doubled(i, j) = t.matrix(i, j);
            doubled(i + 6, j) = t.matrix(i, j);
        }
    }
    const auto a = build_kde(t, KernelKind::Gaussian, BandwidthRule::Fixed, 0.8);
    const auto b = build_kde(tokens_from_matrix(std::move(doubled)), KernelKind::Gaussian,
                             BandwidthRule::Fixed, 0.8);
    SplitMix64 rng(24);
    for (int trial = 0; trial < 20; ++trial) {
        Vector q(2);
        for (auto& v : q) v = 4.0 * (rng.next_unit() - 0.5);
        const auto da = eval_density(a, q);
        const auto db = eval_density(b, q);
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(std::abs(da[j] - db[j]) < 1e-12);
        }
    }
}

TEST_CASE("query gradient vanishes at a lone center") {
    const auto kde = build_kde(single_token({0.0, 0.0}), KernelKind::Gaussian,
                               BandwidthRule::Fixed, 1.0);
    const auto g = eval_density_gradients(kde, {0.0, 0.0});
    CHECK(g.d_query == Vector{0.0, 0.0});
}

TEST_CASE("query gradient cancels between symmetric centers") {
    for (KernelKind kind :
         {KernelKind::Gaussian, KernelKind::Epanechnikov, KernelKind::Triangular}) {
        Matrix m(2, 1);
        m(0, 0) = -1.0;
        m(1, 0) = 1.0;
        const auto kde = build_kde(tokens_from_matrix(std::move(m)), kind,
                                   BandwidthRule::Fixed, 2.0);
        const auto g = eval_density_gradients(kde, {0.0});
        CHECK(g.d_query[0] == 0.0);
        // The two centers pull in opposite directions with equal magnitude.
        CHECK(g.d_centers(0, 0) == doctest::Approx(-g.d_centers(1, 0)).epsilon(1e-15));
    }
}

TEST_CASE("gradients match finite differences of the density") {
    SplitMix64 rng(25);
    const double step = 1e-6;
    for (KernelKind kind :
         {KernelKind::Gaussian, KernelKind::Epanechnikov, KernelKind::Triangular}) {
        int accepted = 0;
        while (accepted < 10) {
            const auto t = random_tokens(5, 4, rng.next());
            const auto base = build_kde(t, kind, BandwidthRule::Scott);
            Vector q(4);
            for (auto& v : q) v = 2.0 * (rng.next_unit() - 0.5);

            // Skip configurations whose query or centers sit within 1e-3 of a
            // kernel kink; subgradients are deliberately 0 there and finite
            // differences straddle the corner.
            bool safe = true;
            for (std::size_t j = 0; j < 4 && safe; ++j) {
                for (std::size_t i = 0; i < 5 && safe; ++i) {
                    const double u = (q[j] - base.centers(i, j)) / base.bandwidths[j];
                    if (kink_margin(kind, u) < 1e-3) safe = false;
                }
            }
            if (!safe) continue;
            ++accepted;

            const auto g = eval_density_gradients(base, q);

            // d_query via central differences (bandwidths unaffected by q).
            for (std::size_t j = 0; j < 4; ++j) {
                Vector qp = q, qm = q;
                qp[j] += step;
                qm[j] -= step;
                const double fd = (eval_density(base, qp)[j] - eval_density(base, qm)[j]) /
                                  (2.0 * step);
                CHECK(g.d_query[j] == doctest::Approx(fd).epsilon(1e-4));
            }

            // d_centers via central differences with the bandwidths pinned so
            // the perturbation cannot re-adapt them.
            for (std::size_t i = 0; i < 5; ++i) {
                for (std::size_t j = 0; j < 4; ++j) {
                    auto tp = t, tm = t;
                    tp.matrix(i, j) += step;
                    tm.matrix(i, j) -= step;
                    const auto kp = build_kde_with_bandwidths(tp, kind, base.bandwidths);
                    const auto km = build_kde_with_bandwidths(tm, kind, base.bandwidths);
                    const double fd =
                        (eval_density(kp, q)[j] - eval_density(km, q)[j]) / (2.0 * step);
                    CHECK(g.d_centers(i, j) == doctest::Approx(fd).epsilon(1e-4).scale(1e-6));
                }
            }
        }
    }
}

TEST_CASE("kde structural invariants are enforced") {
    DimKDE kde;
    kde.centers = Matrix(2, 2);
    kde.bandwidths = {1.0}; // wrong length
    kde.kernel = KernelKind::Gaussian;
    kde.n_effective = 2;
    CHECK_THROWS_AS(kde.validate(), std::invalid_argument);
    kde.bandwidths = {1.0, 0.0}; // non-positive bandwidth
    CHECK_THROWS_AS(kde.validate(), std::invalid_argument);
    kde.bandwidths = {1.0, 1.0};
    kde.n_effective = 0;
    CHECK_THROWS_AS(kde.validate(), std::invalid_argument);
}
