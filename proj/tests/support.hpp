#pragma once

#include <functional>
#include <vector>

#include "snas/gradcheck.hpp"
#include "snas/ops.hpp"
#include "snas/rng.hpp"
#include "snas/tensor.hpp"

namespace snas::test {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

/// Compares tape gradients of <f(inputs), R> for a random projection R with
/// central differences, over every input.
inline GradCheckResult check_op(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                std::vector<Tensor<double>> inputs, Rng& rng,
                                const GradCheckOptions& options = {}) {
    Tensor<double> probe;
    {
        NoGradScope<double> ng;
        probe = random_tensor(f(inputs).shape(), rng);
    }
    for (auto& x : inputs) {
        x.set_requires_grad(true);
        x.zero_grad();
    }
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        Tensor<double> loss = dot(f(inputs), probe);
        tape.backward(loss);
    }
    auto eval = [&] {
        NoGradScope<double> ng;
        return dot(f(inputs), probe).item();
    };
    GradCheckResult total;
    for (auto& x : inputs) {
        std::vector<double> analytic(x.size(), 0.0);
        if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
        total.merge(check_gradient(x, analytic, eval, options));
    }
    return total;
}

}  // namespace snas::test
