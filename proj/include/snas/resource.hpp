// Resource penalty: the cost of a sampled child is linear in the one-hot
// masks, so its expectation under the factorized distribution is a per-edge
// sum and its gradient has a local, per-edge policy-gradient estimate.
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "snas/arch_dist.hpp"
#include "snas/network.hpp"
#include "snas/nn_ops.hpp"
#include "snas/rng.hpp"

namespace snas {

enum class ConstraintLevel { none, mild, moderate, aggressive };

std::string_view constraint_name(ConstraintLevel level);
std::optional<ConstraintLevel> parse_constraint(std::string_view name);

struct ResourceConfig {
    double eta = 0.0;
    double w_params = 1.0;
    double w_flops = 1.0;
    double w_mac = 1.0;

    /// Penalty weight for a preset. Values come from the calibrate-eta
    /// command on the planted task.
    static double preset_eta(ConstraintLevel level);
    void validate() const;
};

/// Per cell, per edge, per op costs.
struct CostTable {
    std::vector<std::vector<std::vector<OpCost>>> raw;
    std::vector<std::vector<std::vector<double>>> scalar;
    std::vector<CellType> cell_types;
};

/// Scalar C(O) = sum_criteria w * criterion / max over the edge's candidates.
std::vector<double> scalar_costs(std::span<const OpCost> costs, const ResourceConfig& config);

CostTable build_cost_table(const NetworkSpec& spec, const ResourceConfig& config);

/// sum over cells and edges of Z^T C(O). masks[c] is row-major (edges x ops).
double sample_cost(const CostTable& table, std::span<const std::vector<double>> masks);
/// sum over cells and edges of Z^T (params, flops, mac).
std::array<double, 3> masked_raw_cost(const CostTable& table, std::span<const std::vector<double>> masks);
/// Raw cost triple of a child given one op index per edge per cell.
OpCost child_cost(const CostTable& table, std::span<const std::vector<std::size_t>> choices);

/// Independent oracle: materializes each selected op of the child, runs it
/// on a dummy input and costs the resulting layers.
OpCost subgraph_walk_cost(const NetworkSpec& spec, const Genotype& genotype);

/// Closed-form E[C(Z)] under softmax(log alpha).
template <typename T>
double expected_cost(const CostTable& table, const ArchParams<T>& alpha);
/// Exact gradient of expected_cost with respect to the logits, per type.
template <typename T>
std::pair<std::vector<double>, std::vector<double>> expected_cost_grad(const CostTable& table,
                                                                       const ArchParams<T>& alpha);

/// Score-function estimate of the expected-cost gradient, rewarding each
/// edge with its own cost. Samples are hardened (argmax), whose distribution
/// does not depend on the temperature. Returns (normal, reduce) gradients.
template <typename T>
std::pair<std::vector<double>, std::vector<double>> mc_cost_grad(const CostTable& table,
                                                                 const ArchParams<T>& alpha, double temperature,
                                                                 std::size_t num_samples, Rng& rng);
/// One-sample version using given per-cell choices.
template <typename T>
std::pair<std::vector<double>, std::vector<double>> cost_grad_from_choices(
    const CostTable& table, const ArchParams<T>& alpha, std::span<const std::vector<std::size_t>> choices);

}  // namespace snas
