#include "snas/baselines.hpp"

#include <stdexcept>

#include "snas/ops.hpp"

namespace snas {

std::string_view mode_name(SearchMode mode) {
    switch (mode) {
        case SearchMode::snas:
            return "snas";
        case SearchMode::darts_attention:
            return "darts_attention";
        case SearchMode::reinforce_constant:
            return "reinforce_constant";
    }
    return "snas";
}

std::optional<SearchMode> parse_mode(std::string_view name) {
    for (SearchMode m : {SearchMode::snas, SearchMode::darts_attention, SearchMode::reinforce_constant}) {
        if (mode_name(m) == name) return m;
    }
    return std::nullopt;
}

template <typename T>
Tensor<T> attention_mask(const Tensor<T>& logits) {
    return softmax(logits);
}

double MovingAverageBaseline::update(double reward) {
    const double b = initialized ? value : reward;
    value = initialized ? decay * value + (1.0 - decay) * reward : reward;
    initialized = true;
    return b;
}

std::vector<double> reinforce_constant_step(std::span<const double> logits, std::size_t num_ops,
                                            std::span<const std::size_t> choices, double reward, double baseline) {
    if (num_ops == 0 || logits.size() != choices.size() * num_ops) {
        throw ShapeError("reinforce: " + std::to_string(choices.size()) + " choices for " +
                         std::to_string(logits.size()) + " logits");
    }
    std::vector<double> grad;
    grad.reserve(logits.size());
    const double advantage = reward - baseline;
    for (std::size_t e = 0; e < choices.size(); ++e) {
        const auto score = categorical_score(logits.subspan(e * num_ops, num_ops), choices[e]);
        for (double s : score) grad.push_back(advantage * s);
    }
    return grad;
}

BiasGap attention_bias(const FunctionalCell<double>& cell, const std::vector<Tensor<double>>& inputs,
                       std::span<const std::vector<double>> logits,
                       const std::function<double(const Tensor<double>&)>& loss) {
    if (logits.size() != cell.edges.size()) throw std::invalid_argument("attention_bias: one logit row per edge");
    NoGradScope<double> ng;
    BiasGap out;
    std::vector<std::vector<double>> probs;
    std::vector<Tensor<double>> mixture;
    for (const auto& row : logits) {
        probs.push_back(probabilities(row));
        mixture.push_back(Tensor<double>(Shape{row.size()}, probs.back()));
    }
    out.mixture_loss = loss(cell.forward(inputs, mixture).nodes.back());

    std::vector<std::size_t> choice(cell.edges.size(), 0);
    while (true) {
        double p = 1.0;
        std::vector<Tensor<double>> masks;
        for (std::size_t e = 0; e < choice.size(); ++e) {
            p *= probs[e][choice[e]];
            Tensor<double> m(Shape{logits[e].size()});
            m[choice[e]] = 1.0;
            masks.push_back(m);
        }
        out.expected_loss += p * loss(cell.forward(inputs, masks).nodes.back());
        std::size_t e = 0;
        while (e < choice.size() && ++choice[e] == logits[e].size()) choice[e++] = 0;
        if (e == choice.size()) break;
    }
    return out;
}

FunctionalCell<double> relu_pair_cell() {
    FunctionalCell<double> cell;
    cell.num_inputs = 1;
    cell.num_nodes = 2;
    cell.edges.push_back({0, 1,
                          {[](const Tensor<double>& x) { return relu(x); },
                           [](const Tensor<double>& x) { return relu(scale(x, -1.0)); }}});
    return cell;
}

template Tensor<float> attention_mask<float>(const Tensor<float>&);
template Tensor<double> attention_mask<double>(const Tensor<double>&);

}  // namespace snas
