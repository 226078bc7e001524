// Central finite-difference gradient checking at 64-bit.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "snas/tensor.hpp"

namespace snas {

struct GradCheckOptions {
    double eps = 1e-5;
    /// Relative error denominator is max(|analytic|, |numeric|, floor).
    double floor = 1e-6;
    double tolerance = 1e-4;
    /// Failing coordinates whose one-sided differences disagree by more than
    /// this relative amount, and whose analytic value lies between the two
    /// one-sided slopes, sit on a ReLU/max kink and are skipped.
    double kink_tolerance = 1e-3;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t kinks = 0;
    std::size_t failures = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    void merge(const GradCheckResult& other);
    double kink_fraction() const { return checked == 0 ? 0.0 : static_cast<double>(kinks) / static_cast<double>(checked); }
};

double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Perturbs `param[i]` for every i in `indices` (all entries when empty),
/// re-evaluating `loss` each time, and compares with `analytic[i]`.
GradCheckResult check_gradient(Tensor<double>& param, std::span<const double> analytic,
                               const std::function<double()>& loss, const GradCheckOptions& options = {},
                               std::span<const std::size_t> indices = {});

}  // namespace snas
