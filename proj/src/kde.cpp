#include "aen/kde.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace aen {

BandwidthRule parse_bandwidth_rule(std::string_view name) {
    if (name == "scott") return BandwidthRule::Scott;
    if (name == "silverman") return BandwidthRule::Silverman;
    if (name == "fixed") return BandwidthRule::Fixed;
    throw std::invalid_argument("unknown bandwidth rule: " + std::string(name));
}

std::string_view bandwidth_rule_name(BandwidthRule rule) {
    switch (rule) {
    case BandwidthRule::Scott: return "scott";
    case BandwidthRule::Silverman: return "silverman";
    case BandwidthRule::Fixed: return "fixed";
    }
    throw std::invalid_argument("unknown bandwidth rule value");
}

double sample_std(std::span<const double> samples) {
    const std::size_t n = samples.size();
    if (n == 0) {
        throw std::domain_error("sample_std: empty sample list");
    }
    if (n == 1) return 0.0;
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : samples) {
        const double d = v - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(n - 1));
}

double estimate_bandwidth(BandwidthRule rule, std::span<const double> samples, double fixed_h) {
    if (samples.empty()) {
        throw std::domain_error("estimate_bandwidth: empty sample list");
    }
    if (rule == BandwidthRule::Fixed) {
        if (!(fixed_h > 0.0)) {
            throw std::invalid_argument("estimate_bandwidth: fixed bandwidth must be > 0");
        }
        return fixed_h;
    }
    const double n = static_cast<double>(samples.size());
    const double sigma = sample_std(samples);
    if (samples.size() == 1 || sigma < kDegenerateSigma) {
        return kBandwidthFloor;
    }
    switch (rule) {
    case BandwidthRule::Scott:
        return std::pow(n, -0.2) * sigma;
    case BandwidthRule::Silverman:
        return std::pow(4.0 / (3.0 * n), 0.2) * sigma;
    default:
        throw std::invalid_argument("estimate_bandwidth: unknown rule");
    }
}

void DimKDE::validate() const {
    if (n_effective == 0 || n_effective != centers.rows) {
        throw std::invalid_argument("kde: n_effective must equal the center row count and be >= 1");
    }
    if (bandwidths.size() != centers.cols) {
        throw std::invalid_argument("kde: bandwidth count does not match dimension count");
    }
    for (double h : bandwidths) {
        if (!(h > 0.0) || !std::isfinite(h)) {
            throw std::invalid_argument("kde: bandwidths must be positive and finite");
        }
    }
    if (!centers.all_finite()) {
        throw std::invalid_argument("kde: non-finite center value");
    }
}

namespace {

Matrix attended_rows(const TokenEmbeddings& tokens) {
    tokens.validate();
    const auto idx = tokens.attended_indices();
    if (idx.empty()) {
        throw std::domain_error("build_kde: no attended tokens");
    }
    Matrix centers(idx.size(), tokens.dim());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto src = tokens.matrix.row(idx[r]);
        auto dst = centers.row(r);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return centers;
}

} // namespace

DimKDE build_kde(const TokenEmbeddings& tokens, KernelKind kernel, BandwidthRule rule,
                 double fixed_h) {
    DimKDE kde;
    kde.centers = attended_rows(tokens);
    kde.kernel = kernel;
    kde.n_effective = kde.centers.rows;
    kde.bandwidths.resize(kde.centers.cols);
    std::vector<double> column(kde.centers.rows);
    for (std::size_t j = 0; j < kde.centers.cols; ++j) {
        for (std::size_t i = 0; i < kde.centers.rows; ++i) {
            column[i] = kde.centers(i, j);
        }
        kde.bandwidths[j] = estimate_bandwidth(rule, column, fixed_h);
    }
    kde.validate();
    return kde;
}

DimKDE build_kde_with_bandwidths(const TokenEmbeddings& tokens, KernelKind kernel,
                                 Vector bandwidths) {
    DimKDE kde;
    kde.centers = attended_rows(tokens);
    kde.kernel = kernel;
    kde.n_effective = kde.centers.rows;
    kde.bandwidths = std::move(bandwidths);
    kde.validate();
    return kde;
}

namespace {

void check_query(const DimKDE& kde, const Vector& query) {
    if (query.size() != kde.dim()) {
        throw std::domain_error("eval_density: query length " + std::to_string(query.size()) +
                                " does not match dimension count " + std::to_string(kde.dim()));
    }
    for (double v : query) {
        if (!std::isfinite(v)) {
            throw std::domain_error("eval_density: non-finite query value");
        }
    }
}

} // namespace

Vector eval_density(const DimKDE& kde, const Vector& query) {
    kde.validate();
    check_query(kde, query);
    const double inv_n = 1.0 / static_cast<double>(kde.n_effective);
    Vector densities(kde.dim(), 0.0);
    for (std::size_t j = 0; j < kde.dim(); ++j) {
        const double h = kde.bandwidths[j];
        double acc = 0.0;
        for (std::size_t i = 0; i < kde.centers.rows; ++i) {
            acc += eval_kernel(kde.kernel, (query[j] - kde.centers(i, j)) / h);
        }
        densities[j] = acc * inv_n / h;
    }
    return densities;
}

DensityGradients eval_density_gradients(const DimKDE& kde, const Vector& query) {
    kde.validate();
    check_query(kde, query);
    const double inv_n = 1.0 / static_cast<double>(kde.n_effective);
    DensityGradients grads;
    grads.d_query.assign(kde.dim(), 0.0);
    grads.d_centers = Matrix(kde.centers.rows, kde.dim());
    for (std::size_t j = 0; j < kde.dim(); ++j) {
        const double h = kde.bandwidths[j];
        const double scale = inv_n / (h * h);
        double acc = 0.0;
        for (std::size_t i = 0; i < kde.centers.rows; ++i) {
            const double kprime = kernel_derivative(kde.kernel, (query[j] - kde.centers(i, j)) / h);
            grads.d_centers(i, j) = -scale * kprime;
            acc += kprime;
        }
        grads.d_query[j] = scale * acc;
    }
    return grads;
}

} // namespace aen
