#include "aen/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace aen {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779; // 1/sqrt(2*pi)

void require_finite(double u) {
    if (!std::isfinite(u)) throw std::domain_error("kernel argument must be finite");
}

} // namespace

double eval_kernel(KernelKind kind, double u) {
    require_finite(u);
    switch (kind) {
        case KernelKind::Gaussian:
            return kInvSqrt2Pi * std::exp(-0.5 * u * u);
        case KernelKind::Epanechnikov:
            return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
        case KernelKind::Triangular:
            return std::abs(u) <= 1.0 ? 1.0 - std::abs(u) : 0.0;
    }
    throw std::domain_error("unknown kernel kind");
}

double kernel_derivative(KernelKind kind, double u) {
    require_finite(u);
    switch (kind) {
        case KernelKind::Gaussian:
            return -u * kInvSqrt2Pi * std::exp(-0.5 * u * u);
        case KernelKind::Epanechnikov:
            return std::abs(u) < 1.0 ? -1.5 * u : 0.0;
        case KernelKind::Triangular:
            if (u == 0.0 || std::abs(u) >= 1.0) return 0.0;
            return u > 0.0 ? -1.0 : 1.0;
    }
    throw std::domain_error("unknown kernel kind");
}

KernelKind parse_kernel_kind(std::string_view name) {
    if (name == "gaussian") return KernelKind::Gaussian;
    if (name == "epanechnikov") return KernelKind::Epanechnikov;
    if (name == "triangular") return KernelKind::Triangular;
    throw std::invalid_argument("unknown kernel kind: " + std::string(name));
}

std::string kernel_kind_name(KernelKind kind) {
    switch (kind) {
        case KernelKind::Gaussian: return "gaussian";
        case KernelKind::Epanechnikov: return "epanechnikov";
        case KernelKind::Triangular: return "triangular";
    }
    return "unknown";
}

} // namespace aen
