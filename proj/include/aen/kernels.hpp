#pragma once

#include <string>
#include <string_view>

namespace aen {

/// Kernel families usable as the KDE building block. Each is a symmetric
/// probability density: nonnegative everywhere and integrating to one.
/// Epanechnikov and Triangular are exactly zero outside [-1, 1].
enum class KernelKind {
    Gaussian,
    Epanechnikov,
    Triangular,
};

/// K(u). Throws std::domain_error for non-finite u.
double eval_kernel(KernelKind kind, double u);

/// dK/du. At the non-differentiable points of the compact kernels
/// (|u| = 1, and u = 0 for Triangular) this returns 0, which lies in the
/// subdifferential and keeps training updates bounded.
double kernel_derivative(KernelKind kind, double u);

/// Config/CLI names: "gaussian", "epanechnikov", "triangular".
KernelKind parse_kernel_kind(std::string_view name);
std::string kernel_kind_name(KernelKind kind);

} // namespace aen
