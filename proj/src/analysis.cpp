#include "aen/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace aen {

MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& labels,
                              const std::vector<double>* losses) {
    if (predictions.size() != labels.size()) {
        throw std::invalid_argument("compute_metrics: prediction/label length mismatch");
    }
    if (predictions.empty()) {
        throw std::invalid_argument("compute_metrics: empty input");
    }
    if (losses && losses->size() != labels.size()) {
        throw std::invalid_argument("compute_metrics: loss list length mismatch");
    }
    MetricsReport r;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i];
        const int l = labels[i];
        if ((p != 0 && p != 1) || (l != 0 && l != 1)) {
            throw std::invalid_argument("compute_metrics: predictions and labels must be 0 or 1");
        }
        if (p == 1) {
            (l == 1 ? r.tp : r.fp)++;
        } else {
            (l == 0 ? r.tn : r.fn)++;
        }
    }
    const auto total = static_cast<double>(r.total());
    r.accuracy = static_cast<double>(r.tp + r.tn) / total;
    if (r.tp + r.fp == 0) {
        r.precision = 0.0;
        r.precision_degenerate = true;
    } else {
        r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
    }
    r.recall = (r.tp + r.fn == 0) ? 0.0
                                  : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
    const double pr = r.precision + r.recall;
    r.f1 = pr > 0.0 ? 2.0 * r.precision * r.recall / pr : 0.0;
    if (losses) {
        r.loss = std::accumulate(losses->begin(), losses->end(), 0.0) /
                 static_cast<double>(losses->size());
        r.has_loss = true;
    }
    return r;
}

namespace {

/// Supremum ECDF gap of two sorted samples via a merged walk.
double ks_statistic_sorted(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n1 = static_cast<double>(a.size());
    const auto n2 = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
    }
    return d;
}

/// Number of distinct n1-subsets of n1+n2 items, saturating at `limit`.
std::uint64_t binomial_capped(std::size_t n, std::size_t k, std::uint64_t limit) {
    k = std::min(k, n - k);
    std::uint64_t result = 1;
    for (std::size_t i = 1; i <= k; ++i) {
        result = result * (n - k + i) / i;
        if (result > limit) return limit + 1;
    }
    return result;
}

constexpr std::uint64_t kExactPermutationLimit = 20000;
constexpr int kMonteCarloPermutations = 10000;

/// Permutation p-value: the share of label reassignments whose D is at least
/// the observed one. Exact over all combinations when that count is small,
/// otherwise seeded Monte Carlo with an add-one correction.
double permutation_p_value(const std::vector<double>& a, const std::vector<double>& b,
                           double d_observed) {
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::size_t n1 = a.size();
    const std::size_t n = pooled.size();
    // Accept D' >= D up to a tiny slack: both sides are exact multiples of
    // 1/(n1*n2) but arrive via different float paths.
    const double cutoff = d_observed - 1e-12;

    const auto split_d = [&](const std::vector<std::size_t>& order) {
        std::vector<double> xa, xb;
        xa.reserve(n1);
        xb.reserve(n - n1);
        for (std::size_t k = 0; k < n; ++k) {
            (k < n1 ? xa : xb).push_back(pooled[order[k]]);
        }
        std::sort(xa.begin(), xa.end());
        std::sort(xb.begin(), xb.end());
        return ks_statistic_sorted(xa, xb);
    };

    if (binomial_capped(n, n1, kExactPermutationLimit) <= kExactPermutationLimit) {
        // Enumerate combinations as permutations of a 0/1 mask.
        std::vector<int> mask(n, 1);
        std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(n - n1), 0);
        std::uint64_t hits = 0, total = 0;
        std::vector<double> xa, xb;
        do {
            xa.clear();
            xb.clear();
            for (std::size_t k = 0; k < n; ++k) {
                (mask[k] ? xa : xb).push_back(pooled[k]);
            }
            std::sort(xa.begin(), xa.end());
            std::sort(xb.begin(), xb.end());
            if (ks_statistic_sorted(xa, xb) >= cutoff) ++hits;
            ++total;
        } while (std::next_permutation(mask.begin(), mask.end()));
        return static_cast<double>(hits) / static_cast<double>(total);
    }

    SplitMix64 rng(0x4b53 ^ ((static_cast<std::uint64_t>(n1) << 32) | n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::uint64_t hits = 0;
    for (int trial = 0; trial < kMonteCarloPermutations; ++trial) {
        for (std::size_t k = n; k > 1; --k) {
            std::swap(order[k - 1], order[rng.next_below(k)]);
        }
        if (split_d(order) >= cutoff) ++hits;
    }
    return static_cast<double>(hits + 1) / static_cast<double>(kMonteCarloPermutations + 1);
}

} // namespace

double kolmogorov_q(double lambda) {
    if (!(lambda >= 0.0)) {
        throw std::domain_error("kolmogorov_q: lambda must be nonnegative");
    }
    // Below 0.2 the survival probability is 1 within 6e-13 and the
    // alternating series converges too slowly to be useful.
    if (lambda < 0.2) return 1.0;
    const double lam2 = lambda * lambda;
    double sum = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 256; ++j) {
        const double term = std::exp(-2.0 * static_cast<double>(j) * j * lam2);
        sum += sign * term;
        if (term < 1e-16) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

KSResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) {
        throw std::domain_error("ks_two_sample: empty sample");
    }
    if (!all_finite(a) || !all_finite(b)) {
        throw std::domain_error("ks_two_sample: non-finite sample value");
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());

    KSResult result;
    result.n1 = a.size();
    result.n2 = b.size();
    result.d_statistic = ks_statistic_sorted(a, b);

    const double n1 = static_cast<double>(a.size());
    const double n2 = static_cast<double>(b.size());
    const double n_effective = n1 * n2 / (n1 + n2);
    if (n_effective < 10.0) {
        result.permutation = true;
        result.p_value = permutation_p_value(a, b, result.d_statistic);
    } else {
        const double sqrt_ne = std::sqrt(n_effective);
        const double lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * result.d_statistic;
        result.p_value = kolmogorov_q(lambda);
    }
    return result;
}

PairingPolicy parse_pairing_policy(std::string_view name) {
    if (name == "consecutive") return PairingPolicy::Consecutive;
    if (name == "all-pairs") return PairingPolicy::AllPairs;
    if (name == "sampled") return PairingPolicy::Sampled;
    throw std::invalid_argument("unknown pairing policy: " + std::string(name));
}

std::string_view pairing_policy_name(PairingPolicy policy) {
    switch (policy) {
    case PairingPolicy::Consecutive: return "consecutive";
    case PairingPolicy::AllPairs: return "all-pairs";
    case PairingPolicy::Sampled: return "sampled";
    }
    throw std::invalid_argument("unknown pairing policy value");
}

namespace {

std::vector<double> attended_column(const TokenEmbeddings& tokens, std::size_t dim) {
    std::vector<double> column;
    column.reserve(tokens.token_count());
    for (std::size_t i = 0; i < tokens.token_count(); ++i) {
        if (tokens.mask[i] != 0) column.push_back(tokens.matrix(i, dim));
    }
    return column;
}

std::size_t p_value_bin(double p) {
    if (p < 1e-4) return 0;
    if (p < 1e-3) return 1;
    if (p < 1e-2) return 2;
    if (p < 1e-1) return 3;
    return 4;
}

} // namespace

KSSummary dimension_ks_analysis(const std::vector<TokenEmbeddings>& embeddings,
                                PairingPolicy policy, std::uint64_t seed,
                                std::size_t max_pairs) {
    if (embeddings.size() < 2) {
        throw std::domain_error("dimension_ks_analysis: need at least 2 embeddings");
    }
    const std::size_t dim = embeddings.front().dim();
    for (const auto& e : embeddings) {
        e.validate();
        if (e.dim() != dim) {
            throw std::invalid_argument("dimension_ks_analysis: embedding dimension mismatch");
        }
        if (e.attended_count() == 0) {
            throw std::domain_error("dimension_ks_analysis: embedding with no attended tokens");
        }
    }

    std::vector<std::pair<std::size_t, std::size_t>> selected;
    switch (policy) {
    case PairingPolicy::Consecutive:
        for (std::size_t i = 0; i + 1 < embeddings.size(); i += 2) {
            selected.emplace_back(i, i + 1);
        }
        break;
    case PairingPolicy::AllPairs:
        for (std::size_t i = 0; i < embeddings.size(); ++i) {
            for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
                selected.emplace_back(i, j);
            }
        }
        break;
    case PairingPolicy::Sampled: {
        SplitMix64 rng(seed);
        for (std::size_t k = 0; k < max_pairs; ++k) {
            const std::size_t i = rng.next_below(embeddings.size());
            std::size_t j = rng.next_below(embeddings.size() - 1);
            if (j >= i) ++j;
            selected.emplace_back(std::min(i, j), std::max(i, j));
        }
        break;
    }
    }

    KSSummary summary;
    summary.histogram.assign(kKSHistogramBins, 0);
    summary.pairs = selected.size();
    std::vector<double> p_values;
    p_values.reserve(selected.size() * dim);
    for (const auto& [s, t] : selected) {
        for (std::size_t j = 0; j < dim; ++j) {
            const auto result =
                ks_two_sample(attended_column(embeddings[s], j), attended_column(embeddings[t], j));
            p_values.push_back(result.p_value);
            summary.histogram[p_value_bin(result.p_value)]++;
        }
    }
    summary.tests = p_values.size();
    if (!p_values.empty()) {
        summary.mean_p = std::accumulate(p_values.begin(), p_values.end(), 0.0) /
                         static_cast<double>(p_values.size());
        std::sort(p_values.begin(), p_values.end());
        const std::size_t mid = p_values.size() / 2;
        summary.median_p = (p_values.size() % 2 == 1)
                               ? p_values[mid]
                               : 0.5 * (p_values[mid - 1] + p_values[mid]);
    }
    return summary;
}

std::uint64_t kernel_eval_flops(KernelKind kind) {
    switch (kind) {
    case KernelKind::Gaussian: return 10;
    case KernelKind::Epanechnikov: return 7;
    case KernelKind::Triangular: return 6;
    }
    throw std::invalid_argument("kernel_eval_flops: unknown kernel");
}

FlopsReport estimate_flops(const FlopsConfig& config) {
    if (config.encoder_params == 0 || config.seq_len == 0 || config.n_encoders == 0 ||
        config.embedding_dim == 0 || config.kde_tokens == 0) {
        throw std::invalid_argument("estimate_flops: all counts must be positive");
    }
    if (config.head_widths.size() < 2) {
        throw std::invalid_argument("estimate_flops: head_widths needs at least input and output");
    }
    for (auto w : config.head_widths) {
        if (w == 0) throw std::invalid_argument("estimate_flops: zero head width");
    }
    FlopsReport report;
    report.encoder = config.n_encoders * 2 * config.encoder_params * config.seq_len;
    report.kde = config.embedding_dim * config.kde_tokens * kernel_eval_flops(config.kernel);
    for (std::size_t i = 0; i + 1 < config.head_widths.size(); ++i) {
        const std::uint64_t in = config.head_widths[i];
        const std::uint64_t out = config.head_widths[i + 1];
        report.head += 2 * in * out + out;
    }
    report.total = report.encoder + report.kde + report.head;
    return report;
}

} // namespace aen
