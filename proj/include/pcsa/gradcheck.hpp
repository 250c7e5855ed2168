#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pcsa/tensor.hpp"

namespace pcsa {

/// Central-difference gradient of a scalar function, evaluated element by
/// element in 64-bit. f must be deterministic; it is called with recording
/// suspended.
TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& x, double eps = 1e-4);

/// ||a - b||_2 / max(||a||_2, ||b||_2); the absolute norm ||a - b||_2 when
/// both norms are below 1e-12.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

struct GradCheckResult {
    std::string group;
    double rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t elements = 0;
    /// Elements whose step was shrunk because a kink fell inside the stencil.
    std::size_t refined = 0;
    bool passed = false;
};

/// Compares backward() against finite differences for every named leaf.
///
/// `loss` builds a scalar from the leaves; it is run once on a tape for the
/// analytic gradient and repeatedly without recording for the numeric one.
/// Leaves are perturbed in place and restored. Elements whose one-sided
/// differences disagree (a relu/abs kink inside the stencil) are re-measured
/// with a step shrunk by 16, at most twice.
std::vector<GradCheckResult> check_gradients(const std::string& prefix,
                                             const std::function<TensorD()>& loss,
                                             std::vector<std::pair<std::string, TensorD>> leaves,
                                             double tolerance = 1e-3, double eps = 1e-4);

enum class GradCheckScope { op, block, net };

struct GradCheckOptions {
    GradCheckScope scope = GradCheckScope::op;
    std::uint64_t seed = 0;
    double tolerance = 1e-3;
    double eps = 1e-4;
};

/// Built-in gradient suites: every differentiable op (op), one residual
/// attention block on 1x8x12x12 (block), or a C0=4 network on 1x3x16x16 (net).
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options);

}  // namespace pcsa
