#include "snas/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace snas {

void GradCheckResult::merge(const GradCheckResult& other) {
    if (other.max_rel_error > max_rel_error) {
        max_rel_error = other.max_rel_error;
        worst_index = other.worst_index;
        worst_analytic = other.worst_analytic;
        worst_numeric = other.worst_numeric;
    }
    checked += other.checked;
    kinks += other.kinks;
    failures += other.failures;
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradient(Tensor<double>& param, std::span<const double> analytic,
                               const std::function<double()>& loss, const GradCheckOptions& options,
                               std::span<const std::size_t> indices) {
    if (analytic.size() != param.size()) {
        throw ShapeError("check_gradient: " + std::to_string(analytic.size()) + " analytic entries for " +
                         std::to_string(param.size()) + " parameters");
    }
    std::vector<std::size_t> all;
    if (indices.empty()) {
        all.resize(param.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        indices = all;
    }
    GradCheckResult result;
    const double h = options.eps;
    const double base = loss();
    for (std::size_t i : indices) {
        const double saved = param[i];
        param[i] = saved + h;
        const double plus = loss();
        param[i] = saved - h;
        const double minus = loss();
        param[i] = saved;
        const double numeric = (plus - minus) / (2 * h);
        double err = relative_error(analytic[i], numeric, options.floor);
        ++result.checked;
        if (err >= options.tolerance) {
            const double forward = (plus - base) / h;
            const double backward = (base - minus) / h;
            if (relative_error(forward, backward, options.floor) > options.kink_tolerance) {
                // At a kink the analytic value is one of the one-sided slopes.
                const double slack = options.tolerance * std::max({std::abs(forward), std::abs(backward), options.floor});
                const double lo = std::min(forward, backward) - slack;
                const double hi = std::max(forward, backward) + slack;
                if (analytic[i] >= lo && analytic[i] <= hi) {
                    ++result.kinks;
                    continue;
                }
            }
            ++result.failures;
        }
        if (err > result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_index = i;
            result.worst_analytic = analytic[i];
            result.worst_numeric = numeric;
        }
    }
    return result;
}

}  // namespace snas
