#pragma once

#include "aen/core.hpp"
#include "aen/embeddings.hpp"
#include "aen/kernels.hpp"

#include <span>
#include <string_view>

namespace aen {

/// Plug-in bandwidth selection rules for the per-dimension estimators.
///   Scott:     h = n^(-1/5) * sigma
///   Silverman: h = (4/(3n))^(1/5) * sigma
///   Fixed:     h = fixed_h regardless of the samples
/// sigma is the sample standard deviation (n-1 denominator). Degenerate
/// columns (sigma < 1e-6, or n == 1 where sigma is undefined) fall back to
/// the floor h_min so densities stay finite.
enum class BandwidthRule { Scott, Silverman, Fixed };

constexpr double kBandwidthFloor = 1e-3;
constexpr double kDegenerateSigma = 1e-6;

BandwidthRule parse_bandwidth_rule(std::string_view name);
std::string_view bandwidth_rule_name(BandwidthRule rule);

/// Sample standard deviation with the n-1 denominator. n == 1 returns 0.
double sample_std(std::span<const double> samples);

/// Bandwidth for one dimension's samples. `fixed_h` is consulted only for
/// BandwidthRule::Fixed and must be positive there. Throws std::domain_error
/// on an empty sample list, std::invalid_argument on a non-positive fixed_h.
double estimate_bandwidth(BandwidthRule rule, std::span<const double> samples, double fixed_h = 0.0);

/// N independent one-dimensional density estimators sharing a common set of
/// M center points (the attended token embeddings). Dimension j uses column
/// j of `centers` with its own bandwidth.
struct DimKDE {
    Matrix centers;    // M x N, mask-filtered token embeddings
    Vector bandwidths; // N positive reals
    KernelKind kernel = KernelKind::Gaussian;
    std::size_t n_effective = 0; // number of center rows (M)

    std::size_t dim() const { return centers.cols; }

    /// Throws std::invalid_argument on violated structural invariants.
    void validate() const;
};

/// Build the estimator bank from attended tokens: masked-out rows are
/// dropped, and each dimension's bandwidth comes from estimate_bandwidth on
/// its column. Throws std::domain_error when no token is attended.
DimKDE build_kde(const TokenEmbeddings& tokens, KernelKind kernel, BandwidthRule rule,
                 double fixed_h = 0.0);

/// Same construction but with externally supplied per-dimension bandwidths.
/// Used where the bandwidths must be held constant across evaluations (e.g.
/// finite differencing a loss in which they would otherwise re-adapt).
DimKDE build_kde_with_bandwidths(const TokenEmbeddings& tokens, KernelKind kernel,
                                 Vector bandwidths);

/// densities[j] = (1/(M*h_j)) * sum_i K((query[j] - centers[i][j]) / h_j).
/// Throws std::domain_error on a query length mismatch or non-finite query.
Vector eval_density(const DimKDE& kde, const Vector& query);

struct DensityGradients {
    Vector d_query;   // N: d densities[j] / d query[j]
    Matrix d_centers; // M x N: d densities[j] / d centers[i][j]
};

/// Derivatives of each density w.r.t. the query coordinate and each center.
/// Bandwidths are treated as constants. With u_ij = (q_j - c_ij)/h_j:
///   d_query[j]      =  (1/(M*h_j^2)) * sum_i K'(u_ij)
///   d_centers[i][j] = -(1/(M*h_j^2)) * K'(u_ij)
DensityGradients eval_density_gradients(const DimKDE& kde, const Vector& query);

} // namespace aen
