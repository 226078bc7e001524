// Comparison modes: deterministic attention (a softmax-weighted mixture of
// every op, no sampling) and constant-reward REINFORCE over hard children.
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "snas/arch_dist.hpp"
#include "snas/cell.hpp"
#include "snas/tensor.hpp"

namespace snas {

enum class SearchMode { snas, darts_attention, reinforce_constant };

std::string_view mode_name(SearchMode mode);
std::optional<SearchMode> parse_mode(std::string_view name);

/// softmax(log alpha) per row; differentiable in the logits.
template <typename T>
Tensor<T> attention_mask(const Tensor<T>& logits);

/// Exponential moving average of past rewards.
struct MovingAverageBaseline {
    double decay = 0.9;
    double value = 0.0;
    bool initialized = false;

    /// Returns the baseline to use for `reward`, then folds it in.
    double update(double reward);
};

/// Ascent direction on log alpha for one hard child with a single scalar
/// reward broadcast to every edge:  (R - b) d log p(choices) / d log alpha.
/// Rows of `logits` are edges; `choices` holds one op index per edge.
std::vector<double> reinforce_constant_step(std::span<const double> logits, std::size_t num_ops,
                                            std::span<const std::size_t> choices, double reward,
                                            double baseline = 0.0);

struct BiasGap {
    double expected_loss = 0.0;  // E over one-hot children of L
    double mixture_loss = 0.0;   // L of the attention mixture
    double gap() const { return expected_loss - mixture_loss; }
};

/// Enumerates every one-hot child of `cell` (op logits per edge) and compares
/// the expected child loss with the loss of the softmax mixture.
BiasGap attention_bias(const FunctionalCell<double>& cell, const std::vector<Tensor<double>>& inputs,
                       std::span<const std::vector<double>> logits,
                       const std::function<double(const Tensor<double>&)>& loss);

/// Single edge with ops relu(x) and relu(-x).
FunctionalCell<double> relu_pair_cell();

}  // namespace snas
