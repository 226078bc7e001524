// The fully factorized architecture distribution: one categorical per edge
// parameterized by logits log(alpha), relaxed with Gumbel noise,
//
//     Z_k = softmax_k((log alpha_k + G_k) / lambda),  G = -log(-log U).
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "snas/cell.hpp"
#include "snas/checkpoint.hpp"
#include "snas/rng.hpp"
#include "snas/tensor.hpp"

namespace snas {

inline constexpr double kUniformLow = 1e-10;
inline constexpr double kUniformHigh = 1.0 - 1e-7;

/// Logit matrices (edges x ops) for the two cell types, initialized to zero.
template <typename T>
struct ArchParams {
    Tensor<T> normal;
    Tensor<T> reduce;

    ArchParams() = default;
    ArchParams(std::size_t num_edges, std::size_t num_ops);

    Tensor<T>& of(CellType type) { return type == CellType::normal ? normal : reduce; }
    const Tensor<T>& of(CellType type) const { return type == CellType::normal ? normal : reduce; }
    std::size_t num_edges() const { return normal.dim(0); }
    std::size_t num_ops() const { return normal.dim(1); }
    void zero_grad() {
        normal.zero_grad();
        reduce.zero_grad();
    }
    std::vector<NamedArray> to_arrays() const;
    void load(std::span<const NamedArray> arrays);
};

/// Draws for every edge of one cell, with the mask they produced.
template <typename T>
struct ArchSample {
    Tensor<T> z;             // (edges x ops), on the tape when the logits are
    std::vector<double> u;   // uniform draws, row-major like z
    std::vector<double> g;   // Gumbel draws
    double temperature = 1.0;
};

class TemperatureSchedule {
public:
    enum class Mode { linear, exponential };

    TemperatureSchedule(double initial = 1.0, double minimum = 0.03, std::size_t epochs = 50,
                        Mode mode = Mode::linear);

    /// Temperature for a 0-based epoch; reaches `minimum` at the last epoch.
    double at(std::size_t epoch) const;
    double initial() const { return initial_; }
    double minimum() const { return minimum_; }
    std::size_t epochs() const { return epochs_; }
    Mode mode() const { return mode_; }

private:
    double initial_, minimum_;
    std::size_t epochs_;
    Mode mode_;
};

/// -log(-log u) for u in (0, 1).
double gumbel(double u);
double clamp_uniform(double u);
/// Draws a clamped uniform and returns its Gumbel transform.
double draw_gumbel(Rng& rng, double* u_out = nullptr);

/// Concrete relaxation of one row at given Gumbel noise (max-subtracted).
std::vector<double> concrete_row(std::span<const double> logits, std::span<const double> g, double temperature);

/// Samples every row of `logits` at `temperature`. Z is differentiable with
/// respect to the logits through the reparameterization.
template <typename T>
ArchSample<T> sample(const Tensor<T>& logits, double temperature, Rng& rng);
/// Same, with caller-provided Gumbel noise (row-major, one per entry).
template <typename T>
ArchSample<T> sample_with_noise(const Tensor<T>& logits, std::span<const double> g, double temperature);

/// softmax(log alpha).
std::vector<double> probabilities(std::span<const double> logits);
/// Shannon entropy (nats) of softmax(log alpha).
double edge_entropy(std::span<const double> logits);
/// Mean edge entropy over the rows of a logit matrix.
template <typename T>
double mean_entropy(const Tensor<T>& logits);
/// log softmax(log alpha)[k].
double log_prob(std::span<const double> logits, std::size_t k);

/// Index of argmax(log alpha + G): the zero-temperature limit of Z.
std::size_t hard_choice(std::span<const double> logits, std::span<const double> g);

/// d log p(k) / d log alpha = onehot(k) - softmax(log alpha).
std::vector<double> categorical_score(std::span<const double> logits, std::size_t k);
/// d log p(z) / d log alpha under the concrete density at temperature lambda:
/// 1 - K alpha_k z_k^-lambda / sum_l alpha_l z_l^-lambda.
std::vector<double> concrete_score(std::span<const double> logits, std::span<const double> z, double temperature);

/// Per-edge argmax of both logit matrices, zero eligible.
template <typename T>
Genotype derive_genotype(const ArchParams<T>& alpha, const ParentGraph& graph);

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace snas
