// Closed-form search gradients and credit assignment, computed from the
// activations and node gradients of one forward/backward pass. These run
// independently of the autodiff engine and are used to cross-check it.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "snas/arch_dist.hpp"
#include "snas/cell.hpp"
#include "snas/rng.hpp"
#include "snas/tensor.hpp"

namespace snas {

enum class AlphaForm {
    log,     // gradient with respect to log alpha
    direct,  // gradient with respect to alpha itself
};

/// Closed-form gradient of one edge given the sampled row z, the alignments
/// g_k = <dL/dx_j, O_k(x_i)>, the temperature and the logits:
///     dL/dlog alpha_k = (z_k / lambda) (g_k - sum_l z_l g_l)
/// and the direct form divides by alpha_k.
std::vector<double> alpha_grad_row(std::span<const double> z, std::span<const double> alignments,
                                   double temperature, std::span<const double> logits, AlphaForm form);

/// Activations and node gradients of one cell after backward.
template <typename T>
struct CellActivations {
    std::span<const Edge> edges;
    std::span<const Tensor<T>> nodes;                     // node values with populated grads
    std::span<const std::vector<Tensor<T>>> op_outputs;   // [edge][op]
    std::span<const Tensor<T>> edge_outputs;              // mixed edge outputs
};

template <typename T>
CellActivations<T> activations(const CellTrace<T>& trace, const ParentGraph& graph) {
    return {graph.edges(), trace.nodes, trace.op_outputs, trace.edge_outputs};
}

/// (edges x ops) closed-form gradient, row-major. Throws when an op output
/// or node gradient is missing.
template <typename T>
std::vector<double> analytic_alpha_grad(const CellActivations<T>& acts, std::span<const double> z,
                                        double temperature, std::span<const double> logits,
                                        AlphaForm form = AlphaForm::log);

struct CreditReport {
    std::uint64_t sample_id = 0;
    std::vector<double> edge_credit;  // R_ij = -<dL/dx_j, O~_ij(x_i)>
    std::vector<double> node_credit;  // <dL/dx_j, x_j>
};

/// Per-edge credit of one pass. The node gradients are read as constants,
/// so nothing flows back through successor nodes.
template <typename T>
CreditReport edge_credit(const CellActivations<T>& acts, std::uint64_t sample_id = 0);

/// Flips the sign of every credit produced on this thread while alive.
/// Used to check that the verification suite notices a broken credit rule.
class CreditSignFault {
public:
    CreditSignFault();
    ~CreditSignFault();
    CreditSignFault(const CreditSignFault&) = delete;
    CreditSignFault& operator=(const CreditSignFault&) = delete;
    static bool active();

private:
    bool previous_;
};

struct MonteCarloEstimate {
    std::vector<double> mean;
    std::vector<double> variance;  // per-sample variance
    std::size_t samples = 0;

    double std_error(std::size_t i) const;
};

/// Mean and per-sample variance of `draw` over n samples (fixed order).
MonteCarloEstimate monte_carlo(std::size_t n, Rng& rng, const std::function<std::vector<double>(Rng&)>& draw);

/// Regime of the score function: the zero-temperature categorical, or the
/// concrete density at a positive temperature.
struct ScoreRegime {
    double temperature = 0.0;  // 0 selects the categorical limit
};

/// Returns -R per edge (the local loss term) for a sampled mask, given as a
/// row-major (edges x ops) matrix.
using CreditFn = std::function<std::vector<double>(std::span<const double> z)>;

/// One draw of the score-function estimator: sample z, then
///     grad_{e,k} = d log p(z_e) / d log alpha_{e,k} * (-R_e).
std::vector<double> score_function_sample(std::span<const double> logits, std::size_t num_ops,
                                          ScoreRegime regime, const CreditFn& credit, Rng& rng);

MonteCarloEstimate score_function_grad(std::span<const double> logits, std::size_t num_ops, ScoreRegime regime,
                                       const CreditFn& credit, std::size_t num_samples, Rng& rng);

/// Draws Z for every row of `logits` at the regime's temperature (hard
/// one-hot in the categorical limit).
std::vector<double> draw_mask(std::span<const double> logits, std::size_t num_ops, ScoreRegime regime, Rng& rng);

// --- Taylor decomposition on bias-free ReLU DAGs ---------------------------

enum class Activation { none, relu, sigmoid };

/// Edge (from -> to) computing act(W x_from (+ bias)). An empty weight means
/// the identity map.
struct TaylorEdge {
    std::size_t from = 0;
    std::size_t to = 0;
    Tensor<double> weight;  // (d_from, d_to), right-multiplied onto row vectors
    Tensor<double> bias;    // must stay undefined for the decomposition
    Activation activation = Activation::relu;
};

/// Node 0 holds the input; f = <readout, x_last>.
struct TaylorNet {
    std::vector<std::size_t> node_dims;
    std::vector<TaylorEdge> edges;
    Tensor<double> readout;
};

struct TaylorReport {
    double f = 0.0;
    std::vector<std::size_t> depth;          // longest-path depth per node
    std::vector<double> node_credit;         // df/dx_j . x_j
    std::vector<double> edge_credit;         // df/dx_j . O~_ij(x_i)
    std::vector<double> layer_sum;           // per depth: node credits plus crossing edges
};

/// Rejects nets with biases or non-ReLU nonlinearities.
TaylorReport taylor_credits(const TaylorNet& net, const Tensor<double>& input);

}  // namespace snas
