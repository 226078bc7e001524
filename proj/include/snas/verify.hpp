// Self-contained numerical checks of the search machinery at 64-bit. Each
// check builds its own synthetic problem and compares against an oracle
// that does not share code with the quantity under test.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "snas/cell.hpp"
#include "snas/credit.hpp"

namespace snas {

struct CheckResult {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

struct VerifyOptions {
    std::uint64_t seed = 1;
    std::size_t gradient_cells = 100;
    std::size_t theta_coords_per_cell = 24;
    std::size_t estimator_samples = 100000;
    std::size_t limit_samples = 100000;
    std::size_t cost_samples = 1000;
    std::size_t expected_cost_samples = 100000;
};

/// Autodiff vs finite differences for alpha and theta, and the closed-form
/// alpha gradient (both forms) vs autodiff, over random small cells.
std::vector<CheckResult> check_gradient_correctness(const VerifyOptions& options);

/// Score-function and reparameterized estimators against exact expectations
/// on enumerable one- and two-edge problems, plus the variance ordering.
std::vector<CheckResult> check_estimator_equivalence(const VerifyOptions& options);

/// Per-layer Taylor conservation on bias-free ReLU DAGs.
std::vector<CheckResult> check_taylor_conservation(const VerifyOptions& options);

/// Argmax frequencies at low temperature against alpha / sum alpha.
std::vector<CheckResult> check_concrete_limit(const VerifyOptions& options);

/// Cost decomposition against the subgraph walk, the closed-form expected
/// cost against Monte Carlo, and the reference cost triple.
std::vector<CheckResult> check_resource(const VerifyOptions& options);

/// The attention-mixture bias of the ReLU pair and of linear cells.
std::vector<CheckResult> check_attention_bias(const VerifyOptions& options);

/// Raw CIFAR record round trip and checkpoint round trip.
std::vector<CheckResult> check_io_roundtrip(const VerifyOptions& options);

std::vector<CheckResult> run_all_checks(const VerifyOptions& options);

/// E[Z_1] of a two-way concrete variable with logit gap delta, and its
/// derivative in delta, by adaptive quadrature over the logistic noise.
std::pair<double, double> concrete_pair_mean(double delta, double temperature);

/// An enumerable toy problem: a functional cell with a linear readout.
struct ToyProblem {
    std::string name;
    FunctionalCell<double> cell;
    std::vector<Tensor<double>> inputs;
    Tensor<double> readout;  // loss = <readout, last node>
    std::vector<double> logits;  // row-major (edges x ops)
    std::size_t num_ops = 2;
};

std::vector<ToyProblem> toy_problems(std::uint64_t seed, std::size_t num_ops);

/// Loss of `problem` with fixed mask rows.
double toy_loss(const ToyProblem& problem, std::span<const double> z);
/// -R per edge from one forward/backward pass at mask z.
std::vector<double> toy_local_losses(const ToyProblem& problem, std::span<const double> z);
/// One reparameterized gradient sample at the given temperature.
std::vector<double> toy_reparam_sample(const ToyProblem& problem, double temperature, Rng& rng);
/// Exact gradient of E[L] in the categorical limit, by enumeration.
std::vector<double> toy_exact_categorical(const ToyProblem& problem);
/// Exact gradient of E[L] at a positive temperature (two ops per edge).
std::vector<double> toy_exact_concrete(const ToyProblem& problem, double temperature);

std::string format_report(const std::vector<CheckResult>& results);

}  // namespace snas
