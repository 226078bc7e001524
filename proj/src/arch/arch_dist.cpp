#include "snas/arch_dist.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "snas/ops.hpp"

namespace snas {

template <typename T>
ArchParams<T>::ArchParams(std::size_t num_edges, std::size_t num_ops)
    : normal(Shape{num_edges, num_ops}, T(0), true), reduce(Shape{num_edges, num_ops}, T(0), true) {}

template <typename T>
std::vector<NamedArray> ArchParams<T>::to_arrays() const {
    return {to_named_array("alpha.normal", normal), to_named_array("alpha.reduce", reduce)};
}

template <typename T>
void ArchParams<T>::load(std::span<const NamedArray> arrays) {
    for (auto [name, t] : {std::pair{"alpha.normal", &normal}, std::pair{"alpha.reduce", &reduce}}) {
        const NamedArray* a = find_array(arrays, name);
        if (!a) throw CheckpointError(std::string("checkpoint has no entry '") + name + "'");
        assign_from(*t, *a);
    }
}

TemperatureSchedule::TemperatureSchedule(double initial, double minimum, std::size_t epochs, Mode mode)
    : initial_(initial), minimum_(minimum), epochs_(epochs), mode_(mode) {
    if (!(minimum > 0.0) || !(initial >= minimum) || epochs == 0) {
        throw std::invalid_argument("temperature schedule needs initial >= minimum > 0 and at least one epoch");
    }
    if (epochs > 1 && initial == minimum) {
        throw std::invalid_argument("temperature schedule must strictly decrease: initial == minimum");
    }
}

double TemperatureSchedule::at(std::size_t epoch) const {
    if (epochs_ == 1) return initial_;
    const double t = static_cast<double>(std::min(epoch, epochs_ - 1)) / static_cast<double>(epochs_ - 1);
    if (mode_ == Mode::linear) return initial_ + (minimum_ - initial_) * t;
    return initial_ * std::pow(minimum_ / initial_, t);
}

double gumbel(double u) {
    if (!(u > 0.0 && u < 1.0)) throw std::domain_error("gumbel: U = " + std::to_string(u) + " is outside (0, 1)");
    return -std::log(-std::log(u));
}

double clamp_uniform(double u) {
    return std::clamp(u, kUniformLow, kUniformHigh);
}

double draw_gumbel(Rng& rng, double* u_out) {
    const double u = clamp_uniform(uniform01(rng));
    if (u_out) *u_out = u;
    return gumbel(u);
}

std::vector<double> concrete_row(std::span<const double> logits, std::span<const double> g, double temperature) {
    if (!(temperature > 0.0)) throw std::domain_error("temperature must be positive");
    if (logits.size() != g.size()) throw ShapeError("concrete_row: logits and noise differ in length");
    std::vector<double> z(logits.size());
    double m = -INFINITY;
    for (std::size_t k = 0; k < z.size(); ++k) {
        z[k] = (logits[k] + g[k]) / temperature;
        m = std::max(m, z[k]);
    }
    double total = 0.0;
    for (double& v : z) total += (v = std::exp(v - m));
    for (double& v : z) v /= total;
    return z;
}

template <typename T>
ArchSample<T> sample_with_noise(const Tensor<T>& logits, std::span<const double> g, double temperature) {
    if (!(temperature > 0.0)) throw std::domain_error("temperature must be positive");
    if (logits.rank() != 2 || g.size() != logits.size()) {
        throw ShapeError("sample: noise of length " + std::to_string(g.size()) + " for logits " +
                         to_string(logits.shape()));
    }
    ArchSample<T> s;
    s.g.assign(g.begin(), g.end());
    s.temperature = temperature;
    Tensor<T> noise(logits.shape());
    for (std::size_t i = 0; i < g.size(); ++i) noise[i] = static_cast<T>(g[i]);
    s.z = softmax(scale(add(logits, noise), static_cast<T>(1.0 / temperature)));
    return s;
}

template <typename T>
ArchSample<T> sample(const Tensor<T>& logits, double temperature, Rng& rng) {
    if (!(temperature > 0.0)) throw std::domain_error("temperature must be positive");
    std::vector<double> u(logits.size()), g(logits.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = draw_gumbel(rng, &u[i]);
    ArchSample<T> s = sample_with_noise(logits, g, temperature);
    s.u = std::move(u);
    return s;
}

std::vector<double> probabilities(std::span<const double> logits) {
    std::vector<double> zero(logits.size(), 0.0);
    return concrete_row(logits, zero, 1.0);
}

double edge_entropy(std::span<const double> logits) {
    const auto p = probabilities(logits);
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

template <typename T>
double mean_entropy(const Tensor<T>& logits) {
    const auto values = to_doubles(logits);
    const std::size_t k = logits.dim(1);
    double total = 0.0;
    for (std::size_t e = 0; e < logits.dim(0); ++e) {
        total += edge_entropy(std::span<const double>(values).subspan(e * k, k));
    }
    return total / static_cast<double>(logits.dim(0));
}

double log_prob(std::span<const double> logits, std::size_t k) {
    if (k >= logits.size()) {
        throw std::out_of_range("log_prob: op index " + std::to_string(k) + " with " +
                                std::to_string(logits.size()) + " candidates");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double v : logits) total += std::exp(v - m);
    return logits[k] - m - std::log(total);
}

std::size_t hard_choice(std::span<const double> logits, std::span<const double> g) {
    std::vector<double> v(logits.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = logits[k] + g[k];
    return argmax_lowest(v);
}

std::vector<double> categorical_score(std::span<const double> logits, std::size_t k) {
    if (k >= logits.size()) throw std::out_of_range("categorical_score: op index out of range");
    auto score = probabilities(logits);
    for (double& v : score) v = -v;
    score[k] += 1.0;
    return score;
}

std::vector<double> concrete_score(std::span<const double> logits, std::span<const double> z, double temperature) {
    const std::size_t n = logits.size();
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k) w[k] = logits[k] - temperature * std::log(z[k]);
    auto share = probabilities(w);
    for (double& v : share) v = 1.0 - static_cast<double>(n) * v;
    return share;
}

template <typename T>
Genotype derive_genotype(const ArchParams<T>& alpha, const ParentGraph& graph) {
    return Genotype{derive_cell_ops(to_doubles(alpha.normal), graph), derive_cell_ops(to_doubles(alpha.reduce), graph)};
}

#define SNAS_INSTANTIATE_ARCH(T)                                                                   \
    template struct ArchParams<T>;                                                                 \
    template ArchSample<T> sample<T>(const Tensor<T>&, double, Rng&);                              \
    template ArchSample<T> sample_with_noise<T>(const Tensor<T>&, std::span<const double>, double); \
    template double mean_entropy<T>(const Tensor<T>&);                                             \
    template Genotype derive_genotype<T>(const ArchParams<T>&, const ParentGraph&);

SNAS_INSTANTIATE_ARCH(float)
SNAS_INSTANTIATE_ARCH(double)

}  // namespace snas
