#include "aen/analysis.hpp"

#include "aen/core.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

using namespace aen;

namespace {

// Frozen from an arbitrary-precision evaluation of the Kolmogorov survival
// series 2*sum_j (-1)^(j-1) exp(-2 j^2 lambda^2).
constexpr double kQ1 = 0.269999671677354521204900645585;
constexpr double kQ05 = 0.963945243664875094385913896282;
constexpr double kQ136 = 0.049485876755377909939490891331;

std::pair<std::vector<int>, std::vector<int>> confusion_vectors(std::size_t tp, std::size_t fp,
                                                                std::size_t tn, std::size_t fn) {
    std::vector<int> preds, labels;
    preds.insert(preds.end(), tp, 1);
    labels.insert(labels.end(), tp, 1);
    preds.insert(preds.end(), fp, 1);
    labels.insert(labels.end(), fp, 0);
    preds.insert(preds.end(), tn, 0);
    labels.insert(labels.end(), tn, 0);
    preds.insert(preds.end(), fn, 0);
    labels.insert(labels.end(), fn, 1);
    return {preds, labels};
}

// Reference D: evaluate both ECDFs at every sample point and take the
// largest gap.
double brute_force_d(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> points(a);
    points.insert(points.end(), b.begin(), b.end());
    double d = 0.0;
    for (double x : points) {
        const auto ca = static_cast<double>(
            std::count_if(a.begin(), a.end(), [&](double v) { return v <= x; }));
        const auto cb = static_cast<double>(
            std::count_if(b.begin(), b.end(), [&](double v) { return v <= x; }));
        d = std::max(d, std::abs(ca / static_cast<double>(a.size()) -
                                 cb / static_cast<double>(b.size())));
    }
    return d;
}

TokenEmbeddings embedding_from_columns(std::size_t tokens, std::size_t dims, double mean,
                                       SplitMix64& rng) {
    TokenEmbeddings t;
    t.matrix = Matrix(tokens, dims);
    for (auto& v : t.matrix.data) v = mean + rng.next_normal();
    t.mask.assign(tokens, 1);
    return t;
}

} // namespace

TEST_CASE("perfect predictions score one across the board") {
    auto [preds, labels] = confusion_vectors(10, 0, 25, 0);
    const auto m = compute_metrics(preds, labels);
    CHECK(m.accuracy == 1.0);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK_FALSE(m.precision_degenerate);
}

TEST_CASE("published precision/recall pair maps to the published f1") {
    // 63 true positives, 37 false positives, 7 false negatives gives
    // precision 0.63 and recall 0.90 exactly.
    auto [preds, labels] = confusion_vectors(63, 37, 930, 7);
    const auto m = compute_metrics(preds, labels);
    CHECK(m.precision == doctest::Approx(0.63).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(0.90).epsilon(1e-12));
    CHECK(m.f1 == doctest::Approx(0.741176470588).epsilon(1e-9));
    CHECK(std::round(m.f1 * 100.0) / 100.0 == 0.74);
}

TEST_CASE("all-negative predictor degenerates gracefully") {
    auto [preds, labels] = confusion_vectors(0, 0, 5, 3);
    const auto m = compute_metrics(preds, labels);
    CHECK(m.precision == 0.0);
    CHECK(m.precision_degenerate);
    CHECK(m.recall == 0.0);
    CHECK(m.f1 == 0.0);
    CHECK(m.accuracy == doctest::Approx(5.0 / 8.0));
}

TEST_CASE("metrics are invariant under pair permutation") {
    auto [preds, labels] = confusion_vectors(4, 3, 7, 2);
    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(5);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.next_below(i)]);
    }
    std::vector<int> p2, l2;
    for (auto k : order) {
        p2.push_back(preds[k]);
        l2.push_back(labels[k]);
    }
    const auto a = compute_metrics(preds, labels);
    const auto b = compute_metrics(p2, l2);
    CHECK(a.tp == b.tp);
    CHECK(a.fp == b.fp);
    CHECK(a.f1 == b.f1);
    CHECK(a.accuracy == b.accuracy);
}

TEST_CASE("metrics validate their inputs") {
    CHECK_THROWS_AS(compute_metrics({1}, {1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(compute_metrics({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(compute_metrics({2}, {1}), std::invalid_argument);
    std::vector<double> losses{0.5};
    CHECK_THROWS_AS(compute_metrics({1, 0}, {1, 0}, &losses), std::invalid_argument);
}

TEST_CASE("mean loss is reported when provided") {
    std::vector<double> losses{1.0, 3.0};
    const auto m = compute_metrics({1, 0}, {1, 0}, &losses);
    CHECK(m.has_loss);
    CHECK(m.loss == 2.0);
}

TEST_CASE("kolmogorov survival matches frozen oracles") {
    CHECK(kolmogorov_q(1.0) == doctest::Approx(kQ1).epsilon(1e-12));
    CHECK(kolmogorov_q(0.5) == doctest::Approx(kQ05).epsilon(1e-12));
    CHECK(kolmogorov_q(1.36) == doctest::Approx(kQ136).epsilon(1e-12));
    CHECK(kolmogorov_q(0.01) == 1.0);
    CHECK(kolmogorov_q(8.0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-30));
}

TEST_CASE("identical samples give d zero and p one") {
    const auto r = ks_two_sample({1, 2, 3}, {1, 2, 3});
    CHECK(r.d_statistic == 0.0);
    CHECK(r.p_value == 1.0);
    CHECK(r.permutation); // effective n = 1.5 < 10
}

TEST_CASE("disjoint supports give d one") {
    const auto r = ks_two_sample({0, 1}, {10, 11});
    CHECK(r.d_statistic == 1.0);
    // 2 of the C(4,2)=6 label reassignments reproduce a fully separated
    // split, so the exact permutation p-value is 1/3.
    CHECK(r.p_value == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("interleaved two-point samples give d one half") {
    const auto r = ks_two_sample({1, 2}, {1.5, 2.5});
    CHECK(r.d_statistic == 0.5);
}

TEST_CASE("d matches the brute-force ecdf oracle exactly") {
    SplitMix64 rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n1 = 1 + rng.next_below(100);
        const std::size_t n2 = 1 + rng.next_below(100);
        std::vector<double> a(n1), b(n2);
        for (auto& v : a) v = rng.next_normal();
        for (auto& v : b) v = rng.next_normal() + (trial % 3 == 0 ? 1.0 : 0.0);
        // Occasionally force ties across the samples.
        if (trial % 5 == 0 && n2 >= 2) {
            b[0] = a[0];
            b[1] = a[n1 / 2];
        }
        const auto r = ks_two_sample(a, b);
        CHECK(r.d_statistic == brute_force_d(a, b));
    }
}

TEST_CASE("ks is symmetric and invariant under monotone transforms") {
    SplitMix64 rng(102);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(30), b(40);
        for (auto& v : a) v = rng.next_normal();
        for (auto& v : b) v = 0.5 + rng.next_normal();
        const auto ab = ks_two_sample(a, b);
        const auto ba = ks_two_sample(b, a);
        CHECK(ab.d_statistic == ba.d_statistic);
        CHECK(ab.p_value == ba.p_value);

        auto ta = a, tb = b;
        for (auto& v : ta) v = v * v * v + v;
        for (auto& v : tb) v = v * v * v + v;
        const auto transformed = ks_two_sample(ta, tb);
        CHECK(transformed.d_statistic == ab.d_statistic);
    }
}

TEST_CASE("large-sample path uses the corrected asymptotic distribution") {
    SplitMix64 rng(103);
    std::vector<double> a(60), b(80);
    for (auto& v : a) v = rng.next_normal();
    for (auto& v : b) v = rng.next_normal();
    const auto r = ks_two_sample(a, b);
    CHECK_FALSE(r.permutation);
    const double ne = 60.0 * 80.0 / 140.0;
    const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * r.d_statistic;
    CHECK(r.p_value == kolmogorov_q(lambda));
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
}

TEST_CASE("well-separated large samples get vanishing p-values") {
    SplitMix64 rng(104);
    std::vector<double> a(50), b(50);
    for (auto& v : a) v = rng.next_normal();
    for (auto& v : b) v = 5.0 + rng.next_normal();
    const auto r = ks_two_sample(a, b);
    CHECK(r.p_value < 1e-3);
    CHECK(r.d_statistic > 0.9);
}

TEST_CASE("empty samples are rejected") {
    CHECK_THROWS_AS(ks_two_sample({}, {1.0}), std::domain_error);
    CHECK_THROWS_AS(ks_two_sample({1.0}, {}), std::domain_error);
    CHECK_THROWS_AS(ks_two_sample({std::nan("")}, {1.0}), std::domain_error);
}

TEST_CASE("identical embeddings give all p-values one") {
    SplitMix64 rng(105);
    const auto e = embedding_from_columns(12, 6, 0.0, rng);
    const auto summary = dimension_ks_analysis({e, e}, PairingPolicy::Consecutive);
    CHECK(summary.tests == 6);
    CHECK(summary.pairs == 1);
    CHECK(summary.mean_p == 1.0);
    CHECK(summary.median_p == 1.0);
    CHECK(summary.histogram.back() == 6);
}

TEST_CASE("shifted columns push the median p-value below a thousandth") {
    SplitMix64 rng(106);
    const auto base = embedding_from_columns(50, 64, 0.0, rng);
    const auto shifted = embedding_from_columns(50, 64, 5.0, rng);
    const auto summary = dimension_ks_analysis({base, shifted}, PairingPolicy::Consecutive);
    CHECK(summary.median_p < 1e-3);
}

TEST_CASE("mixed shifted and identical columns skew mean above median") {
    // Mirrors the diagnostic that motivated per-dimension densities: most
    // dimensions separate cleanly (tiny p) while a minority look identical
    // (large p), so the mean ends up far above the median.
    SplitMix64 rng(107);
    const std::size_t dims = 96, shifted_dims = 72, tokens = 50;
    TokenEmbeddings a, b;
    a.matrix = Matrix(tokens, dims);
    b.matrix = Matrix(tokens, dims);
    a.mask.assign(tokens, 1);
    b.mask.assign(tokens, 1);
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j < dims; ++j) {
            a.matrix(i, j) = rng.next_normal();
            b.matrix(i, j) = rng.next_normal() + (j < shifted_dims ? 5.0 : 0.0);
        }
    }
    const auto summary = dimension_ks_analysis({a, b}, PairingPolicy::Consecutive);
    CHECK(summary.median_p < 1e-3);
    CHECK(summary.mean_p > 10.0 * summary.median_p);
    CHECK(summary.mean_p >= summary.median_p);
}

TEST_CASE("pairing policies select the documented pairs") {
    SplitMix64 rng(108);
    std::vector<TokenEmbeddings> es;
    for (int i = 0; i < 5; ++i) es.push_back(embedding_from_columns(4, 2, 0.0, rng));
    CHECK(dimension_ks_analysis(es, PairingPolicy::Consecutive).pairs == 2);
    CHECK(dimension_ks_analysis(es, PairingPolicy::AllPairs).pairs == 10);
    const auto sampled = dimension_ks_analysis(es, PairingPolicy::Sampled, 9, 7);
    CHECK(sampled.pairs == 7);
    // Deterministic under the same seed.
    const auto again = dimension_ks_analysis(es, PairingPolicy::Sampled, 9, 7);
    CHECK(sampled.mean_p == again.mean_p);
}

TEST_CASE("ks analysis validates its inputs") {
    SplitMix64 rng(109);
    const auto a = embedding_from_columns(4, 2, 0.0, rng);
    const auto b = embedding_from_columns(4, 3, 0.0, rng);
    CHECK_THROWS_AS(dimension_ks_analysis({a}, PairingPolicy::Consecutive), std::domain_error);
    CHECK_THROWS_AS(dimension_ks_analysis({a, b}, PairingPolicy::Consecutive),
                    std::invalid_argument);
}

TEST_CASE("pairing policy names round trip") {
    for (auto p : {PairingPolicy::Consecutive, PairingPolicy::AllPairs, PairingPolicy::Sampled}) {
        CHECK(parse_pairing_policy(pairing_policy_name(p)) == p);
    }
    CHECK_THROWS_AS(parse_pairing_policy("zigzag"), std::invalid_argument);
}

TEST_CASE("tiny dense layer costs eighteen flops") {
    FlopsConfig config;
    config.encoder_params = 1;
    config.seq_len = 1;
    config.n_encoders = 1;
    config.embedding_dim = 1;
    config.kde_tokens = 1;
    config.head_widths = {4, 2};
    const auto report = estimate_flops(config);
    CHECK(report.head == 18);
}

TEST_CASE("flops parts sum to the total") {
    FlopsConfig config;
    config.encoder_params = 109'000'000;
    config.seq_len = 128;
    config.n_encoders = 2;
    config.embedding_dim = 384;
    config.kde_tokens = 128;
    config.head_widths = {384, 64, 2};
    config.kernel = KernelKind::Gaussian;
    const auto report = estimate_flops(config);
    CHECK(report.total == report.encoder + report.kde + report.head);
    CHECK(report.encoder == 2ULL * 2ULL * 109'000'000ULL * 128ULL);
    CHECK(report.kde == 384ULL * 128ULL * 10ULL);
    CHECK(report.head == (2ULL * 384 * 64 + 64) + (2ULL * 64 * 2 + 2));
}

TEST_CASE("doubling sequence length doubles the encoder term") {
    FlopsConfig config;
    config.encoder_params = 1000;
    config.seq_len = 16;
    config.n_encoders = 2;
    config.embedding_dim = 8;
    config.kde_tokens = 16;
    config.head_widths = {8, 2};
    const auto base = estimate_flops(config);
    config.seq_len = 32;
    const auto doubled = estimate_flops(config);
    CHECK(doubled.encoder == 2 * base.encoder);
    CHECK(doubled.kde == base.kde);
    CHECK(doubled.head == base.head);
}

TEST_CASE("per-kernel evaluation costs are fixed") {
    CHECK(kernel_eval_flops(KernelKind::Gaussian) == 10);
    CHECK(kernel_eval_flops(KernelKind::Epanechnikov) == 7);
    CHECK(kernel_eval_flops(KernelKind::Triangular) == 6);
}

TEST_CASE("flops estimator validates its config") {
    FlopsConfig config;
    config.encoder_params = 0;
    config.seq_len = 1;
    config.n_encoders = 1;
    config.embedding_dim = 1;
    config.kde_tokens = 1;
    config.head_widths = {4, 2};
    CHECK_THROWS_AS(estimate_flops(config), std::invalid_argument);
    config.encoder_params = 1;
    config.head_widths = {4};
    CHECK_THROWS_AS(estimate_flops(config), std::invalid_argument);
    config.head_widths = {4, 0};
    CHECK_THROWS_AS(estimate_flops(config), std::invalid_argument);
}
