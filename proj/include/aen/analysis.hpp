#pragma once

#include "aen/core.hpp"
#include "aen/embeddings.hpp"
#include "aen/kernels.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace aen {

/// Confusion-matrix metrics for a binary classifier. When tp+fp = 0 the
/// precision is undefined; it is reported as 0 with precision_degenerate set
/// so F1 stays defined.
struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double loss = 0.0; // mean of the supplied losses; 0 when none given
    bool has_loss = false;
    bool precision_degenerate = false;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
};

/// Standard confusion-matrix metrics with class 1 as the positive class.
/// Throws std::invalid_argument on length mismatches or labels outside {0,1}.
MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& labels,
                              const std::vector<double>* losses = nullptr);

/// Two-sample Kolmogorov-Smirnov result. `permutation` marks the
/// small-sample fallback path (effective n < 10), where the p-value comes
/// from the permutation distribution instead of the asymptotic series.
struct KSResult {
    double d_statistic = 0.0;
    double p_value = 1.0;
    std::size_t n1 = 0, n2 = 0;
    bool permutation = false;
};

/// D = sup_x |ECDF_a(x) - ECDF_b(x)|; p-value from the asymptotic
/// Kolmogorov distribution with effective n = n1*n2/(n1+n2) and the
/// small-sample correction lambda = (sqrt(n_e) + 0.12 + 0.11/sqrt(n_e))*D.
/// For n_e < 10 the asymptotic form is unreliable and a permutation test is
/// used (exact enumeration when feasible, otherwise seeded Monte Carlo).
/// Throws std::domain_error on an empty sample.
KSResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Survival function of the Kolmogorov distribution,
/// Q(lambda) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2), clamped to
/// [0, 1]. Exposed for tests.
double kolmogorov_q(double lambda);

/// Which sentence pairs feed the per-dimension KS study. The source study
/// does not state its pairing, so the policy is explicit.
enum class PairingPolicy {
    Consecutive, // (0,1), (2,3), ...
    AllPairs,    // every i < j
    Sampled,     // max_pairs seeded random draws of distinct (i, j)
};

PairingPolicy parse_pairing_policy(std::string_view name);
std::string_view pairing_policy_name(PairingPolicy policy);

/// Decade histogram bin edges for p-values: [0,1e-4), [1e-4,1e-3),
/// [1e-3,1e-2), [1e-2,1e-1), [1e-1,1].
constexpr std::size_t kKSHistogramBins = 5;

struct KSSummary {
    double mean_p = 0.0;
    double median_p = 0.0;
    std::size_t tests = 0;    // pairs * dimensions
    std::size_t pairs = 0;    // sentence pairs examined
    std::vector<std::size_t> histogram; // kKSHistogramBins decade bins
};

/// For each selected sentence pair and each embedding dimension, compare the
/// two attended-token columns with ks_two_sample and aggregate the p-values.
/// Throws std::domain_error on fewer than 2 embeddings and
/// std::invalid_argument on dimension mismatches.
KSSummary dimension_ks_analysis(const std::vector<TokenEmbeddings>& embeddings,
                                PairingPolicy policy, std::uint64_t seed = 0,
                                std::size_t max_pairs = 100);

/// Inputs for the forward-pass cost model. Head widths list the full layer
/// width chain, e.g. {384, 2} for a single dense layer.
struct FlopsConfig {
    std::uint64_t encoder_params = 0;
    std::uint64_t seq_len = 0;
    std::uint64_t n_encoders = 2;
    std::uint64_t embedding_dim = 0;        // density dimensions (N)
    std::uint64_t kde_tokens = 0;           // kernels per dimension (M)
    std::vector<std::uint64_t> head_widths; // at least 2 entries
    KernelKind kernel = KernelKind::Gaussian;
};

struct FlopsReport {
    std::uint64_t encoder = 0;
    std::uint64_t kde = 0;
    std::uint64_t head = 0;
    std::uint64_t total = 0;
};

/// Cost model, all exact integer arithmetic, multiply-accumulate = 2 FLOPs:
///   encoder = n_encoders * 2 * encoder_params * seq_len
///   kde     = N * M * per-kernel evaluation cost (see kernel_eval_flops)
///   head    = sum over consecutive widths of (2*in*out + out)
FlopsReport estimate_flops(const FlopsConfig& config);

/// Documented per-evaluation operation counts for one kernel term
/// K((x - x_i)/h):
///   Gaussian:     sub, div, square, halve, negate, exp(~4), scale = 10
///   Epanechnikov: sub, div, square, sub, scale, compare, select   = 7
///   Triangular:   sub, div, abs, sub, compare, select             = 6
std::uint64_t kernel_eval_flops(KernelKind kind);

// Published reference points for the cost comparison (forward pass,
// batch 1, sequence length 128). Reported alongside estimates as ratios;
// never asserted, since the published counting convention is unstated.
constexpr std::uint64_t kReferenceDualEncoderFlops = 22'400'000'000ULL; // 219M-param dual encoder
constexpr std::uint64_t kReferenceLlama3BFlops = 360'900'000'000ULL;    // 3.2B-param decoder
constexpr std::uint64_t kReferencePhiMiniFlops = 464'000'000'000ULL;    // 3.82B-param decoder

} // namespace aen
